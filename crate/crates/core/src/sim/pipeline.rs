use super::logs::SESSION_GAP;
use super::world::SyntheticWorld;
use super::SimError;
use crate::graph::{ConceptGraph, Provenance};
use crate::mining::{
    apply_relations, build_graph, mine_consequent, mine_isa_lexical, segment_sessions, ApplyReport, BuildConfig,
    BuildSummary, ConsequentConfig, ScoredRelation, UserEvent,
};

/// Size of the query corpus a world graph is built from.
pub const CORPUS_SIZE: usize = 2000;

#[derive(Debug, Clone)]
pub struct WorldKg {
    pub graph: ConceptGraph,
    pub summary: BuildSummary,
    pub isa: Vec<ScoredRelation>,
    pub consequent: Vec<ScoredRelation>,
    pub isa_report: ApplyReport,
    pub consequent_report: ApplyReport,
}

/// Consequent edge confidence: the mined probability that the source is
/// followed by the destination within a session.
pub fn consequent_confidence(r: &ScoredRelation) -> f64 {
    r.evidence.get("p_follow").copied().unwrap_or(0.0)
}

/// Relations mined from logs and inserted into a built graph.
#[derive(Debug, Clone)]
pub struct MinedRelations {
    pub isa: Vec<ScoredRelation>,
    pub consequent: Vec<ScoredRelation>,
    pub isa_report: ApplyReport,
    pub consequent_report: ApplyReport,
}

/// Add lexical isA edges between intents, then Consequent edges mined from
/// the sessions of `events`.
pub fn mine_relations_into(
    graph: &mut ConceptGraph,
    events: &[UserEvent],
    consequent: &ConsequentConfig,
) -> Result<MinedRelations, SimError> {
    let isa = mine_isa_lexical(graph);
    let isa_report = apply_relations(graph, &isa, 0.0, Provenance::Lexical, |r| r.score);
    let sessions = segment_sessions(events, SESSION_GAP, usize::MAX);
    let mined = mine_consequent(&sessions, consequent).map_err(|e| SimError::Component(e.to_string()))?;
    let consequent_report = apply_relations(graph, &mined, 0.0, Provenance::Bayesian, consequent_confidence);
    Ok(MinedRelations {
        isa,
        consequent: mined,
        isa_report,
        consequent_report,
    })
}

/// The full graph path on a world: build from the world's query corpus,
/// then mine relations from `events`.
pub fn build_world_kg(
    world: &SyntheticWorld,
    events: &[UserEvent],
    consequent: &ConsequentConfig,
    seed: u64,
) -> Result<WorldKg, SimError> {
    let corpus = world.query_corpus(CORPUS_SIZE, seed);
    let (mut graph, summary) = build_graph(&corpus, &world.lexicon, &BuildConfig::default())
        .map_err(|e| SimError::Component(e.to_string()))?;
    let mined = mine_relations_into(&mut graph, events, consequent)?;
    Ok(WorldKg {
        graph,
        summary,
        isa: mined.isa,
        consequent: mined.consequent,
        isa_report: mined.isa_report,
        consequent_report: mined.consequent_report,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::graph::NodeKind;
    use crate::sim::{generate_logs, generate_world, WorldConfig};

    #[test]
    fn world_graph_has_every_intent_and_planted_rules() {
        let w = generate_world(&WorldConfig::default(), 0).unwrap();
        let logs = generate_logs(&w, 1500, 12, 0);
        let kg = build_world_kg(&w, &logs.events, &ConsequentConfig::default(), 0).unwrap();
        for l in w.labels() {
            assert!(kg.graph.find(NodeKind::Intent, &l).is_some(), "missing {l}");
        }
        assert!(kg.graph.validate().is_clean());
        let tickets = kg.graph.find(NodeKind::Intent, "buy movie tickets").unwrap();
        let chains = kg.graph.consequent_chains(tickets, 2).unwrap();
        assert!(chains.iter().any(|c| kg.graph.label(c.path[1]) == "buy snacks"));
    }
}
