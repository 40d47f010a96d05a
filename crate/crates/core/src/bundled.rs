//! Data files shipped with the crate: the meeting-domain ontology layer,
//! the default rule set, the default provider mappings and the meeting
//! scenario.

use crate::acquisition::MappingRuleSet;
use crate::ontology::{DomainOntologyDoc, Ontology};
use crate::reasoner::RuleSet;
use crate::sim::ScenarioScript;

pub const MEETING_ONTOLOGY_JSON: &str = include_str!("../data/meeting.ontology.json");

pub fn meeting_ontology() -> DomainOntologyDoc {
    DomainOntologyDoc::from_json(MEETING_ONTOLOGY_JSON, true).expect("bundled ontology parses")
}

/// Upper ontology with the meeting layer plugged in.
pub fn meeting_ontology_plugged() -> Ontology {
    Ontology::load_upper().plug_domain(&meeting_ontology()).expect("bundled ontology plugs")
}

pub const DEFAULT_RULES_JSON: &str = include_str!("../data/default.rules.json");

pub fn default_rules() -> RuleSet {
    RuleSet::from_json(DEFAULT_RULES_JSON).expect("bundled rules parse")
}

pub const DEFAULT_MAPPING_JSON: &str = include_str!("../data/default.mapping.json");

pub fn default_mapping() -> MappingRuleSet {
    MappingRuleSet::from_json(DEFAULT_MAPPING_JSON).expect("bundled mapping parses")
}

pub const MEETING_SCENARIO_JSON: &str = include_str!("../data/meeting.scenario.json");

pub fn meeting_scenario() -> ScenarioScript {
    ScenarioScript::from_json(MEETING_SCENARIO_JSON).expect("bundled scenario parses")
}
