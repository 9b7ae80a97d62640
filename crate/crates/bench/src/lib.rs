//! Shared fixtures for the benchmarks: a deterministic synthetic corpus
//! with its trained bootstrap model, statistics, and tied-state map.

use chenflow_cli::synth::{generate, SyntheticCorpus, SyntheticSpec};
use chenflow_core::am::{build_graphs, em_iterate, flat_start, viterbi_align, AcousticModel};
use chenflow_core::context::{CdConfig, HmmTopology, TriContext};
use chenflow_core::stats::{accumulate, StatsTable};
use chenflow_core::tree::{generate_questions, Question, TreeConfig};
use chenflow_core::UtteranceGraph;

pub struct Fixture {
    pub corpus: SyntheticCorpus,
    pub graphs: Vec<UtteranceGraph>,
    pub model: AcousticModel,
    pub stats: StatsTable,
    pub questions: Vec<Question>,
}

/// Builds a 120-utterance corpus and trains the CI bootstrap two EM
/// iterations deep, enough for realistic alignment and tree inputs.
pub fn fixture() -> Fixture {
    let spec = SyntheticSpec::standard(1234, 20, 120);
    let corpus = generate(&spec).expect("synthetic corpus");
    let cd = CdConfig::default();
    let topo = HmmTopology::default();
    let graphs = build_graphs(
        &corpus.utterances,
        &corpus.lexicon,
        &corpus.inventory,
        &cd,
        &topo,
    )
    .expect("graphs");
    let mut model = flat_start(
        &corpus.utterances,
        &corpus.lexicon,
        &corpus.inventory,
        &cd,
        &topo,
    )
    .expect("flat start")
    .model;
    for _ in 0..2 {
        model = em_iterate(&model, &corpus.utterances, &graphs)
            .expect("em")
            .0;
    }
    let mut stats = StatsTable::new(corpus.utterances[0].features.dim());
    for (utt, graph) in corpus.utterances.iter().zip(&graphs) {
        let aligned = viterbi_align(graph, &utt.features, &model).expect("align");
        let labels: Vec<TriContext> = aligned.frame_labels.iter().map(|&(_, c)| c).collect();
        stats = stats
            .merge(accumulate(&labels, &utt.features).expect("accumulate"))
            .expect("merge");
    }
    let questions = generate_questions(&stats, &corpus.inventory, 1e-4).expect("questions");
    Fixture {
        corpus,
        graphs,
        model,
        stats,
        questions,
    }
}

pub fn tree_config() -> TreeConfig {
    TreeConfig {
        max_leaves: 96,
        min_gain: 50.0,
        min_count: 3.0,
        share_wb_root: false,
        var_floor: 1e-4,
    }
}
