use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use chrono::NaiveDate;
use hrsci_core::analysis;
use hrsci_core::indexes::grid::write_grid_scores_csv;
use hrsci_core::indexes::write_indexes_csv;
use hrsci_core::pipeline::{Pipeline, PipelineError, RunOptions, Stage};
use hrsci_core::query_risk::QueryPatternSet;
use hrsci_core::synth::{emit_logs, generate_world, OutbreakSpec, SynthConfig};
use hrsci_core::{Execution, Roster, StudyConfig};
use tempfile::TempDir;

fn synth() -> SynthConfig {
    SynthConfig {
        users: 150,
        days: 21,
        extent_km: 4,
        outbreaks: vec![OutbreakSpec {
            col: Some(6),
            row: Some(24),
            search_start: NaiveDate::from_ymd_opt(2020, 6, 5).unwrap(),
            lead_days: 7,
            ..Default::default()
        }],
        ..Default::default()
    }
}

struct Fixture {
    dir: TempDir,
    cfg: StudyConfig,
}

impl Fixture {
    fn new() -> Self {
        let dir = tempfile::tempdir().unwrap();
        let world = generate_world(&synth()).unwrap();
        let data = dir.path().join("data");
        emit_logs(&world, &data, Execution::Parallel).unwrap();
        let cfg = StudyConfig::load(
            &data.join("study.toml"),
            &[
                "lag_max_days=5".into(),
                "min_overlap_days=10".into(),
                "refine_top_n=5".into(),
            ],
        )
        .unwrap();
        Fixture { dir, cfg }
    }

    fn out(&self) -> PathBuf {
        self.dir.path().join("results")
    }

    fn pipeline(&self, cfg: &StudyConfig) -> Pipeline {
        Pipeline::new(cfg.clone(), self.out(), RunOptions::default()).unwrap()
    }
}

fn digests(dir: &Path) -> BTreeMap<String, Vec<u8>> {
    let mut out = BTreeMap::new();
    for stage in Stage::ALL {
        let d = dir.join(stage.name());
        for e in std::fs::read_dir(d).unwrap().flatten() {
            let name = format!("{}/{}", stage.name(), e.file_name().to_string_lossy());
            out.insert(name, std::fs::read(e.path()).unwrap());
        }
    }
    out
}

#[test]
fn run_all_writes_every_stage_and_reuses_on_rerun() {
    let fx = Fixture::new();
    let reports = fx.pipeline(&fx.cfg).run_all().unwrap();
    assert_eq!(reports.len(), Stage::ALL.len());
    assert!(reports.iter().all(|r| !r.reused));
    assert!(fx.out().join("manifest.json").exists());
    for f in [
        "ingest/users.csv",
        "risk/high_risk_users.csv",
        "homes/homes.csv",
        "contacts/contacts.csv",
        "indexes/indexes.csv",
        "grid/grid_scores.csv",
        "grid/grid_scores.geojson",
        "rank/weekly_ranks.csv",
        "lag/lag_results.csv",
    ] {
        assert!(fx.out().join(f).exists(), "{f}");
    }
    let first = digests(&fx.out());

    let again = fx.pipeline(&fx.cfg).run_all().unwrap();
    assert!(again.iter().all(|r| r.reused));
    assert_eq!(digests(&fx.out()), first);
}

#[test]
fn threshold_change_invalidates_risk_and_downstream_only() {
    let fx = Fixture::new();
    fx.pipeline(&fx.cfg).run_all().unwrap();
    let k4 = StudyConfig {
        risk_threshold_k: 4,
        ..fx.cfg.clone()
    };
    let reports = fx.pipeline(&k4).run_all().unwrap();
    let reused: BTreeMap<Stage, bool> = reports.iter().map(|r| (r.stage, r.reused)).collect();
    for s in [Stage::Ingest, Stage::Homes, Stage::Contacts] {
        assert!(reused[&s], "{s} should be reused");
    }
    for s in [Stage::Risk, Stage::Indexes, Stage::Grid, Stage::Rank, Stage::Lag] {
        assert!(!reused[&s], "{s} should rerun");
    }
}

#[test]
fn single_stage_needs_its_upstream() {
    let fx = Fixture::new();
    let p = fx.pipeline(&fx.cfg);
    match p.run(Stage::Risk) {
        Err(PipelineError::MissingUpstream { stage, missing }) => {
            assert_eq!((stage, missing), (Stage::Risk, Stage::Ingest));
        }
        other => panic!("expected a missing-upstream error, got {other:?}"),
    }
    p.run(Stage::Ingest).unwrap();
    p.run(Stage::Risk).unwrap();
    let err = p.run(Stage::Indexes).unwrap_err();
    assert!(
        matches!(
            err,
            PipelineError::MissingUpstream {
                missing: Stage::Contacts,
                ..
            }
        ),
        "{err}"
    );
    assert!(err.to_string().contains("contacts"));
}

#[test]
fn edited_upstream_output_is_stale() {
    let fx = Fixture::new();
    let p = fx.pipeline(&fx.cfg);
    for s in [Stage::Ingest, Stage::Risk, Stage::Homes, Stage::Contacts] {
        p.run(s).unwrap();
    }
    let path = fx.out().join("contacts/contacts.csv");
    let mut text = std::fs::read_to_string(&path).unwrap();
    text.push_str("2020-06-01T00:00:00Z,u00000,0,0,1\n");
    std::fs::write(&path, text).unwrap();
    match p.run(Stage::Indexes) {
        Err(PipelineError::StaleInput { upstream, .. }) => assert_eq!(upstream, Stage::Contacts),
        other => panic!("expected a stale-input error, got {other:?}"),
    }
}

#[test]
fn changed_config_makes_upstream_stale() {
    let fx = Fixture::new();
    let p = fx.pipeline(&fx.cfg);
    for s in [Stage::Ingest, Stage::Risk] {
        p.run(s).unwrap();
    }
    let k4 = StudyConfig {
        risk_threshold_k: 4,
        ..fx.cfg.clone()
    };
    for s in [Stage::Homes, Stage::Contacts] {
        fx.pipeline(&k4).run(s).unwrap();
    }
    let err = fx.pipeline(&k4).run(Stage::Indexes).unwrap_err();
    match &err {
        PipelineError::StaleInput { upstream, reason, .. } => {
            assert_eq!(*upstream, Stage::Risk);
            assert!(reason.contains("configuration"));
        }
        other => panic!("expected a stale-input error, got {other:?}"),
    }
}

#[test]
fn file_stages_match_in_memory_run() {
    let fx = Fixture::new();
    fx.pipeline(&fx.cfg).run_all().unwrap();

    let world = generate_world(&synth()).unwrap();
    let roster = Roster::new(world.user_ids().iter().cloned());
    let log = world.query_log(Execution::Sequential);
    let cases = world.cases();
    let out = analysis::run_study(
        &fx.cfg,
        world.area(),
        &roster,
        |u| world.track(u),
        &log,
        Some(&cases),
        &QueryPatternSet::synthetic(),
        Execution::Sequential,
    )
    .unwrap();

    let mut buf = Vec::new();
    write_indexes_csv(&out.series.all().map(|s| s.clone()), &mut buf).unwrap();
    assert_eq!(std::fs::read(fx.out().join("indexes/indexes.csv")).unwrap(), buf);

    let mut buf = Vec::new();
    let grids: Vec<_> = out.grid.coarse.iter().chain(&out.grid.fine).cloned().collect();
    write_grid_scores_csv(&grids, &mut buf).unwrap();
    assert_eq!(std::fs::read(fx.out().join("grid/grid_scores.csv")).unwrap(), buf);
}
