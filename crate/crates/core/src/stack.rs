//! The assembled kernel: acquisition feeding the knowledge base, with the
//! reasoner run after every mutation batch.

use std::sync::Arc;

use thiserror::Error;

use crate::acquisition::{Acquisition, AcquisitionError, ProviderDescriptor, ProviderEvent};
use crate::config::Config;
use crate::kb::{Binding, Fact, FactId, KbError, KnowledgeBase, Pattern, Value};
use crate::reasoner::{CurrentActivity, CycleReport, Reasoner, ReasonerError};
use crate::time::Timestamp;

#[derive(Debug, Error)]
pub enum StackError {
    #[error(transparent)]
    Acquisition(#[from] AcquisitionError),
    #[error(transparent)]
    Kb(#[from] KbError),
    #[error(transparent)]
    Reasoner(#[from] ReasonerError),
    #[error("{0} facts come only from the reasoner")]
    DerivedInput(crate::kb::SourceTag),
}

/// Result of one externally triggered mutation batch.
#[derive(Clone, Debug, Default)]
pub struct BatchOutcome {
    /// Facts stored directly by the batch.
    pub facts: Vec<FactId>,
    pub cycle: CycleReport,
}

#[derive(Debug)]
pub struct Stack {
    pub kb: KnowledgeBase,
    pub acquisition: Acquisition,
    pub reasoner: Reasoner,
}

impl Stack {
    pub fn new(config: &Config) -> Result<Stack, StackError> {
        let mut acquisition = Acquisition::new(config.mapping.clone(), config.confidence);
        for p in &config.providers {
            acquisition.register_provider(p.clone())?;
        }
        Ok(Stack {
            kb: KnowledgeBase::new(Arc::clone(&config.ontology), config.mode),
            acquisition,
            reasoner: Reasoner::new(config.rules.clone()).with_activity_predicate(&config.activity_predicate),
        })
    }

    /// A stack whose KB is rebuilt from an existing journal.
    pub fn with_kb(config: &Config, kb: KnowledgeBase) -> Result<Stack, StackError> {
        let mut s = Stack::new(config)?;
        s.kb = kb;
        s.reasoner.run(&mut s.kb)?;
        Ok(s)
    }

    pub fn register_provider(&mut self, d: ProviderDescriptor) -> Result<(), StackError> {
        Ok(self.acquisition.register_provider(d)?)
    }

    pub fn ingest(&mut self, e: &ProviderEvent) -> Result<BatchOutcome, StackError> {
        let facts = self.acquisition.ingest(&mut self.kb, e)?;
        Ok(BatchOutcome { facts, cycle: self.reasoner.run(&mut self.kb)? })
    }

    pub fn user_update(&mut self, subject: &str, predicate: &str, object: Value, at: Timestamp) -> Result<BatchOutcome, StackError> {
        let id = self.acquisition.user_update(&mut self.kb, subject, predicate, object, at)?;
        Ok(BatchOutcome { facts: vec![id], cycle: self.reasoner.run(&mut self.kb)? })
    }

    /// Stores a ready-made base fact and reasons over it.
    pub fn add_fact(&mut self, fact: Fact) -> Result<BatchOutcome, StackError> {
        if fact.source.is_derived() {
            return Err(StackError::DerivedInput(fact.source));
        }
        let id = self.kb.add_fact(fact)?;
        Ok(BatchOutcome { facts: vec![id], cycle: self.reasoner.run(&mut self.kb)? })
    }

    pub fn retract(&mut self, id: FactId) -> Result<Vec<FactId>, StackError> {
        Ok(self.reasoner.retract_derivations(&mut self.kb, id)?)
    }

    pub fn query(&self, pattern: &Pattern) -> Vec<Binding> {
        self.kb.query(pattern)
    }

    pub fn current_activity(&self, subject: &str, at: Timestamp) -> Option<CurrentActivity> {
        self.reasoner.current_activity(&self.kb, subject, at)
    }
}
