use std::path::{Path, PathBuf};

use faithgen::evaluation::RowKind;
use faithgen::pipeline::{Pipeline, PipelineError, RunConfig, Stage, StageOutcome};
use faithgen::prompting::Strategy;

fn fixture(name: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("tests/fixtures").join(name)
}

fn config(extra: &str) -> RunConfig {
    let text = format!(
        r#"
seed = 11
[dataset]
path = "{}"
[generation]
simple_repetitions = 20
[provider]
kind = "mock"
parallelism = 4
{extra}
"#,
        fixture("tweets.csv").display()
    );
    RunConfig::from_toml_str(&text, Path::new(".")).unwrap()
}

#[test]
fn full_mock_run_produces_every_row() {
    let dir = tempfile::tempdir().unwrap();
    let mut p = Pipeline::open(dir.path(), Some(config(""))).unwrap();
    let report = p.run_all().unwrap();
    let kinds: Vec<RowKind> = report.rows.iter().map(|r| r.kind).collect();
    assert_eq!(kinds, RowKind::ALL);
    assert!(report.failed_rows().is_empty(), "{}", report.render_table());
    for row in &report.rows {
        for v in [row.accuracy, row.macro_f1, row.believability].into_iter().flatten() {
            assert!((0.0..=1.0).contains(&v));
        }
    }
    let filtering = report.rows.iter().find(|r| r.kind == RowKind::Filtering).unwrap();
    assert!(filtering.circularity_warning);
    let table = std::fs::read_to_string(dir.path().join("report/report.txt")).unwrap();
    assert!(table.contains("Grounding + Taxonomy"));
    assert!(table.contains("All not-sarcastic"));
}

#[test]
fn stages_refuse_to_run_out_of_order() {
    let dir = tempfile::tempdir().unwrap();
    let mut p = Pipeline::open(dir.path(), Some(config(""))).unwrap();
    let err = p.run_stage(Stage::Evaluate, false).unwrap_err();
    assert!(matches!(err, PipelineError::MissingUpstream { ref upstream, .. } if upstream == "train"), "{err}");
    let err = p.run_stage(Stage::Generate(Strategy::Grounding), false).unwrap_err();
    assert!(err.to_string().contains("run `split` first"), "{err}");
}

#[test]
fn done_stages_are_skipped_and_deleted_artifacts_regenerate_identically() {
    let dir = tempfile::tempdir().unwrap();
    let mut c = config("");
    c.generation.strategies = vec![Strategy::Grounding];
    let mut p = Pipeline::open(dir.path(), Some(c)).unwrap();
    p.run_all().unwrap();
    assert_eq!(p.run_stage(Stage::Split, false).unwrap(), StageOutcome::Skipped);

    let synthetic = dir.path().join("synthetic/grounding.jsonl");
    let report = dir.path().join("report/report.jsonl");
    let before = (std::fs::read(&synthetic).unwrap(), std::fs::read(&report).unwrap());
    std::fs::remove_file(&synthetic).unwrap();
    assert_eq!(p.run_stage(Stage::Clean(Strategy::Grounding), false).unwrap(), StageOutcome::Ran);
    // downstream stages were invalidated by the rerun
    assert!(p.run_stage(Stage::Evaluate, false).is_err());
    p.run_all().unwrap();
    let after = (std::fs::read(&synthetic).unwrap(), std::fs::read(&report).unwrap());
    assert_eq!(before, after);
}

#[test]
fn reopening_with_a_different_config_is_rejected() {
    let dir = tempfile::tempdir().unwrap();
    drop(Pipeline::open(dir.path(), Some(config(""))).unwrap());
    let mut other = config("");
    other.seed = 12;
    assert!(matches!(
        Pipeline::open(dir.path(), Some(other)),
        Err(PipelineError::ConfigMismatch { .. })
    ));
    // the stored config is reused when none is given
    drop(Pipeline::open(dir.path(), None).unwrap());
}

#[test]
fn a_second_process_cannot_share_the_run_directory() {
    let dir = tempfile::tempdir().unwrap();
    let _first = Pipeline::open(dir.path(), Some(config(""))).unwrap();
    assert!(matches!(
        Pipeline::open(dir.path(), Some(config(""))),
        Err(PipelineError::Locked(_))
    ));
}
