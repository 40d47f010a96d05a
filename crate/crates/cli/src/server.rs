//! Threaded TCP endpoint for the wire protocol.
//!
//! Each connection gets a reader thread that handles requests under the
//! stack's lock and a writer thread fed by a channel. Replies and
//! notifications are queued while the lock is held, so every session sees
//! them in mutation order.

use std::io::{self, BufRead, BufReader, Read, Write};
use std::net::{Shutdown, SocketAddr, TcpListener, TcpStream};
use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::mpsc::{self, Sender};
use std::sync::{Arc, Mutex, MutexGuard};
use std::thread;

use context_kernel::kb::{Delivery, Pattern, SubId};
use context_kernel::stack::Stack;

use crate::wire::{parse_frame, ClientMsg, ErrorCode, Role, ServerMsg, MAX_FRAME};

pub type SharedStack = Arc<Mutex<Stack>>;

fn lock(stack: &SharedStack) -> MutexGuard<'_, Stack> {
    // A panicking session must not take the server down with it.
    stack.lock().unwrap_or_else(|e| e.into_inner())
}

pub struct Server {
    listener: TcpListener,
    stack: SharedStack,
    stop: Arc<AtomicBool>,
}

/// Stops a running [`Server`] from another thread or a signal handler.
#[derive(Clone)]
pub struct StopHandle {
    stop: Arc<AtomicBool>,
    addr: SocketAddr,
}

impl StopHandle {
    pub fn stop(&self) {
        self.stop.store(true, Ordering::SeqCst);
        // Wake the blocking accept.
        let _ = TcpStream::connect(self.addr);
    }
}

impl Server {
    pub fn bind(addr: &str, stack: Stack) -> io::Result<Server> {
        Ok(Server { listener: TcpListener::bind(addr)?, stack: Arc::new(Mutex::new(stack)), stop: Arc::default() })
    }

    pub fn local_addr(&self) -> io::Result<SocketAddr> {
        self.listener.local_addr()
    }

    pub fn stack(&self) -> SharedStack {
        Arc::clone(&self.stack)
    }

    pub fn stop_handle(&self) -> io::Result<StopHandle> {
        Ok(StopHandle { stop: Arc::clone(&self.stop), addr: self.local_addr()? })
    }

    /// Accepts sessions until stopped, then flushes the journal.
    pub fn run(self) -> io::Result<()> {
        for conn in self.listener.incoming() {
            if self.stop.load(Ordering::SeqCst) {
                break;
            }
            let Ok(stream) = conn else { continue };
            let stack = Arc::clone(&self.stack);
            thread::spawn(move || Session::new(stack).serve(stream));
        }
        lock(&self.stack).kb.flush().map_err(|e| io::Error::other(e.to_string()))
    }
}

struct Session {
    stack: SharedStack,
    role: Option<Role>,
    subs: Vec<SubId>,
}

impl Session {
    fn new(stack: SharedStack) -> Session {
        Session { stack, role: None, subs: Vec::new() }
    }

    fn serve(mut self, stream: TcpStream) {
        let Ok(mut out) = stream.try_clone() else { return };
        let (tx, rx) = mpsc::channel::<String>();
        let writer = thread::spawn(move || {
            for line in rx {
                if out.write_all(line.as_bytes()).is_err() {
                    break;
                }
            }
        });
        let mut reader = BufReader::new(&stream);
        let mut buf = Vec::new();
        loop {
            buf.clear();
            match (&mut reader).take(MAX_FRAME as u64 + 1).read_until(b'\n', &mut buf) {
                Ok(0) | Err(_) => break,
                Ok(_) => {}
            }
            let complete = buf.last() == Some(&b'\n');
            if complete {
                buf.pop();
                if buf.last() == Some(&b'\r') {
                    buf.pop();
                }
            } else if buf.len() > MAX_FRAME {
                let _ = tx.send(ServerMsg::error(ErrorCode::Parse, "frame too long").to_line());
                break;
            }
            if buf.iter().all(u8::is_ascii_whitespace) {
                continue;
            }
            if !self.handle(&buf, &tx) {
                break;
            }
        }
        {
            let mut stack = lock(&self.stack);
            for id in self.subs.drain(..) {
                stack.kb.unsubscribe(id);
            }
        }
        drop(tx);
        let _ = writer.join();
        let _ = stream.shutdown(Shutdown::Both);
    }

    /// Handles one frame; `false` ends the session.
    fn handle(&mut self, frame: &[u8], tx: &Sender<String>) -> bool {
        let msg = match parse_frame(frame) {
            Ok(m) => m,
            Err(e) => {
                let _ = tx.send(ServerMsg::error(ErrorCode::Parse, e).to_line());
                return false;
            }
        };
        let shared = Arc::clone(&self.stack);
        let mut stack = lock(&shared);
        let reply = self.respond(msg, &mut stack, tx);
        let fatal = matches!(&reply, ServerMsg::Error { code, .. } if code.is_fatal());
        let _ = tx.send(reply.to_line());
        !fatal
    }

    fn respond(&mut self, msg: ClientMsg, stack: &mut Stack, tx: &Sender<String>) -> ServerMsg {
        let rejected = |e: &dyn std::fmt::Display| ServerMsg::error(ErrorCode::Rejected, e.to_string());
        let role = match (&msg, self.role) {
            (ClientMsg::Hello { .. }, Some(_)) => return ServerMsg::error(ErrorCode::Protocol, "duplicate hello"),
            (ClientMsg::Hello { role, provider }, None) => {
                self.role = Some(*role);
                if let Some(d) = provider {
                    let known = stack.acquisition.provider(&d.provider_id);
                    if known != Some(d) {
                        if let Err(e) = stack.register_provider(d.clone()) {
                            return rejected(&e);
                        }
                    }
                }
                return ServerMsg::Welcome { role: *role };
            }
            (_, None) => return ServerMsg::error(ErrorCode::Protocol, "expected hello first"),
            (_, Some(r)) => r,
        };
        match msg {
            ClientMsg::Hello { .. } => unreachable!("handled above"),
            ClientMsg::Event(_) | ClientMsg::Fact { .. } if role != Role::Provider => {
                ServerMsg::error(ErrorCode::Protocol, "only providers may push")
            }
            ClientMsg::Event(e) => match stack.ingest(&e) {
                Ok(out) => ServerMsg::Ack { seq: stack.kb.seq(), facts: out.facts },
                Err(e) => rejected(&e),
            },
            ClientMsg::Fact { fact } => match stack.add_fact(fact) {
                Ok(out) => ServerMsg::Ack { seq: stack.kb.seq(), facts: out.facts },
                Err(e) => rejected(&e),
            },
            ClientMsg::Query { id, pattern, at } => match Pattern::parse(&pattern) {
                Ok(p) => {
                    let p = match at {
                        Some(t) => p.at(t),
                        None => p,
                    };
                    ServerMsg::Result { id, bindings: Some(stack.query(&p)), activity: None }
                }
                Err(e) => ServerMsg::error(ErrorCode::Pattern, e.to_string()),
            },
            ClientMsg::Activity { id, subject, at } => {
                ServerMsg::Result { id, bindings: None, activity: stack.current_activity(&subject, at) }
            }
            ClientMsg::Subscribe { id, pattern } => match Pattern::parse(&pattern) {
                Ok(p) => {
                    let tx = tx.clone();
                    let sub_id = stack
                        .kb
                        .subscribe(p, Delivery::callback(move |n| tx.send(ServerMsg::Notification(Box::new(n.clone())).to_line()).is_ok()));
                    self.subs.push(sub_id);
                    ServerMsg::Subscribed { id, sub_id }
                }
                Err(e) => ServerMsg::error(ErrorCode::Pattern, e.to_string()),
            },
            ClientMsg::Unsubscribe { sub_id } => {
                let existed = match self.subs.iter().position(|s| *s == sub_id) {
                    Some(i) => {
                        self.subs.remove(i);
                        stack.kb.unsubscribe(sub_id)
                    }
                    None => false,
                };
                ServerMsg::Unsubscribed { sub_id, existed }
            }
        }
    }
}
