//! Flow read back from files drives the tracker exactly like the in-memory
//! estimate it was exported from.

use sftrack_core::flow::{estimate_oracle, write_flow, FileFlow};
use sftrack_core::pipeline::{condition, run_sequence, FlowSource, PipelineConfig, SequenceInput};
use sftrack_core::sim::{generate, Scenario};

#[test]
fn exported_oracle_flow_reproduces_tracks() {
    let frames = generate(&Scenario::demo()).unwrap();
    let (input, motions) = SequenceInput::from_sim(&frames);
    let cfg = PipelineConfig::default();
    let dir = tempfile::tempdir().unwrap();

    let sampled: Vec<_> = input
        .clouds
        .iter()
        .enumerate()
        .map(|(t, c)| condition(c, &cfg, t).unwrap())
        .collect();
    for t in 1..frames.len() {
        let field = estimate_oracle(&sampled[t - 1], &motions[t]).unwrap();
        write_flow(&FileFlow::path_for(dir.path(), t), sampled[t - 1].positions(), &field).unwrap();
    }

    let from_files = run_sequence(&input, &cfg, &FlowSource::Files(dir.path().into())).unwrap();
    let oracle = run_sequence(&input, &cfg, &FlowSource::Oracle(motions)).unwrap();
    assert_eq!(from_files.frames.len(), oracle.frames.len());
    for (a, b) in from_files.frames.iter().zip(&oracle.frames) {
        let ids_a: Vec<u64> = a.iter().map(|t| t.id).collect();
        let ids_b: Vec<u64> = b.iter().map(|t| t.id).collect();
        assert_eq!(ids_a, ids_b);
        assert_eq!(
            a.iter().map(|t| t.bbox).collect::<Vec<_>>(),
            b.iter().map(|t| t.bbox).collect::<Vec<_>>()
        );
    }
    assert_eq!(from_files.flow_starved, 0);
}
