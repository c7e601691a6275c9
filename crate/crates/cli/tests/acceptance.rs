//! Acceptance suite. One PASS/FAIL line per criterion; exits non-zero when
//! any criterion fails.

use std::fs;
use std::path::{Path, PathBuf};
use std::process::Command;
use std::time::{Duration, Instant};

use aipaging_cli::{
    default_seeds, shipped_config, sweep, table2, verify_paths, RunSpec, SweepAxis, SweepPoint,
    ALL_POLICIES,
};
use aipaging_core::metrics::oracle::sampled_violation_rate;
use aipaging_core::{
    aggregate, run_scenario, EvidenceLevel, PolicyKind, ScenarioConfig, SetupId, SimDuration,
};
use sha2::{Digest, Sha256};

/// Criterion 1 runtime budget.
const TABLE_BUDGET: Duration = Duration::from_secs(60);
/// Criterion 3 runtime budget.
const SWEEP_BUDGET: Duration = Duration::from_secs(300);
/// Criterion 3 ceiling for the gated policy.
const AIPAGING_FAILURE_CEILING: f64 = 0.02;
/// Criterion 5: gated median over best-effort median.
const TXN_RATIO: f64 = 1.5;
/// Criterion 10, in percentage points.
const SAMPLER_TOLERANCE_PP: f64 = 0.1;

struct Report {
    failed: usize,
}

impl Report {
    fn line(&mut self, n: u32, ok: bool, what: &str, detail: String) {
        if !ok {
            self.failed += 1;
        }
        println!(
            "criterion {n:>2} {}: {what} | {detail}",
            if ok { "PASS" } else { "FAIL" }
        );
    }
}

fn spec(policies: &[PolicyKind], verify: bool) -> RunSpec {
    RunSpec {
        seeds: default_seeds(),
        policies: policies.to_vec(),
        out: PathBuf::new(),
        verify,
    }
}

fn points(table: &[(PolicyKind, Vec<SweepPoint>)], p: PolicyKind) -> &[SweepPoint] {
    &table.iter().find(|(q, _)| *q == p).expect("policy swept").1
}

fn fmt_series(v: &[f64]) -> String {
    v.iter().map(|x| format!("{x:.4}")).collect::<Vec<_>>().join(" ")
}

fn hash_dir(dir: &Path) -> Vec<(String, String)> {
    let mut v: Vec<_> = fs::read_dir(dir)
        .expect("output dir")
        .map(|e| {
            let p = e.expect("dir entry").path();
            let h = Sha256::digest(fs::read(&p).expect("output file"));
            let hex: String = h.iter().map(|b| format!("{b:02x}")).collect();
            (p.file_name().unwrap().to_string_lossy().into_owned(), hex)
        })
        .collect();
    v.sort();
    v
}

fn main() {
    let mut r = Report { failed: 0 };
    let configs: Vec<ScenarioConfig> = SetupId::SHIPPED.iter().map(|s| shipped_config(*s)).collect();

    // 1, 2 and 7 share one pass over S1-S5 x 3 policies x 10 seeds.
    let t0 = Instant::now();
    let (rows, oracle_hits) = table2(&configs, &spec(&ALL_POLICIES, true)).expect("table runs");
    let elapsed = t0.elapsed();
    let cell = |row: &aipaging_cli::TableRow, p: PolicyKind| {
        row.cells.iter().find(|(q, _)| *q == p).map(|(_, v)| *v).unwrap()
    };
    let ai: Vec<f64> = rows.iter().map(|row| cell(row, PolicyKind::AiPaging)).collect();
    r.line(
        1,
        ai.iter().all(|v| *v == 0.0) && elapsed < TABLE_BUDGET,
        "AiPaging violation rate exactly 0 on S1-S5 x 10 seeds, under 60 s",
        format!("rates [{}], {:.1}s for all three policies", fmt_series(&ai), elapsed.as_secs_f64()),
    );

    let mut ok2 = true;
    let mut detail2 = Vec::new();
    for p in [PolicyKind::EndpointBound, PolicyKind::BestEffort] {
        let v: Vec<f64> = rows.iter().map(|row| cell(row, p)).collect();
        let load = v[2].min(v[3]);
        let other = v[0].max(v[1]).max(v[4]);
        ok2 &= v.iter().all(|x| *x > 0.0) && load >= other;
        detail2.push(format!("{p} [{}]", fmt_series(&v)));
    }
    r.line(
        2,
        ok2,
        "baselines > 0 everywhere, S3/S4 >= S1/S2/S5",
        detail2.join("; "),
    );

    // 3
    let t0 = Instant::now();
    let p_values: Vec<f64> = (1..=9).map(|i| f64::from(i) / 10.0).collect();
    let (p_table, _) = sweep(
        &shipped_config(SetupId::S2),
        SweepAxis::RelocationProbability,
        &p_values,
        &spec(&ALL_POLICIES, false),
    )
    .expect("p sweep");
    let elapsed = t0.elapsed();
    let fr = |p| -> Vec<f64> {
        points(&p_table, p).iter().map(|x| x.agg.request_failure_rate.mean).collect()
    };
    let (a, b, e) = (
        fr(PolicyKind::AiPaging),
        fr(PolicyKind::BestEffort),
        fr(PolicyKind::EndpointBound),
    );
    let ordered = (0..p_values.len()).all(|i| a[i] <= b[i] && b[i] <= e[i]);
    let low = a.iter().all(|x| *x <= AIPAGING_FAILURE_CEILING);
    r.line(
        3,
        ordered && low && elapsed < SWEEP_BUDGET,
        "request failure AiPaging <= BestEffort <= EndpointBound over p=0.1..0.9, AiPaging <= 0.02",
        format!(
            "aipaging [{}] best-effort [{}] endpoint-bound [{}], {:.1}s",
            fmt_series(&a),
            fmt_series(&b),
            fmt_series(&e),
            elapsed.as_secs_f64()
        ),
    );

    // 4
    let stress = [0.0, 0.25, 0.5, 0.75, 1.0];
    let (s_table, _) = sweep(
        &shipped_config(SetupId::S5),
        SweepAxis::StressLevel,
        &stress,
        &spec(&ALL_POLICIES, false),
    )
    .expect("stress sweep");
    let rec = |p| -> Option<Vec<f64>> {
        points(&s_table, p)
            .iter()
            .map(|x| x.agg.recovery_success_probability)
            .collect()
    };
    let (a, b, e) = (
        rec(PolicyKind::AiPaging),
        rec(PolicyKind::BestEffort),
        rec(PolicyKind::EndpointBound),
    );
    let ok4 = match (&a, &b, &e) {
        (Some(a), Some(b), Some(e)) => {
            let non_inc = |v: &[f64]| v.windows(2).all(|w| w[1] <= w[0]);
            non_inc(a)
                && non_inc(b)
                && non_inc(e)
                && (0..stress.len()).all(|i| a[i] >= b[i] && b[i] >= e[i])
        }
        _ => false,
    };
    let show = |v: &Option<Vec<f64>>| v.as_deref().map_or("no failures hit".into(), fmt_series);
    r.line(
        4,
        ok4,
        "recovery non-increasing in stress, AiPaging >= BestEffort >= EndpointBound",
        format!("aipaging [{}] best-effort [{}] endpoint-bound [{}]", show(&a), show(&b), show(&e)),
    );

    // 5
    let median = |p: PolicyKind| -> Option<f64> {
        let mut base = shipped_config(SetupId::S1);
        base.policy = p;
        let reps: Vec<_> = spec(&[p], false)
            .expand(&base)
            .iter()
            .map(|c| run_scenario(c).expect("S1 run").report)
            .collect();
        aggregate(&reps).ok()?.transaction_time.map(|s| s.p50)
    };
    let (ma, mb) = (median(PolicyKind::AiPaging), median(PolicyKind::BestEffort));
    r.line(
        5,
        matches!((ma, mb), (Some(x), Some(y)) if x <= TXN_RATIO * y),
        "S1 median transaction time AiPaging <= 1.5 x BestEffort",
        format!("aipaging {ma:?} ms, best-effort {mb:?} ms"),
    );

    // 6
    let levels = [EvidenceLevel::Minimal, EvidenceLevel::PerEvent, EvidenceLevel::PerRequest];
    let rates: Vec<f64> = levels
        .iter()
        .map(|lvl| {
            let mut c = shipped_config(SetupId::S3);
            c.evidence = *lvl;
            let reps: Vec<_> = spec(&[PolicyKind::AiPaging], false)
                .expand(&c)
                .iter()
                .map(|c| run_scenario(c).expect("S3 run").report)
                .collect();
            aggregate(&reps).expect("reports").evidence_traffic_rate.mean
        })
        .collect();
    let thetas = [0.5, 0.6, 0.7, 0.8, 0.9, 1.0];
    let (t_table, _) = sweep(
        &shipped_config(SetupId::S3),
        SweepAxis::OverloadThreshold,
        &thetas,
        &spec(&[PolicyKind::AiPaging], false),
    )
    .expect("threshold sweep");
    let ev: Vec<f64> = points(&t_table, PolicyKind::AiPaging)
        .iter()
        .map(|x| x.agg.evidence_traffic_rate.mean)
        .collect();
    let finite = ev.iter().all(|x| x.is_finite());
    let mono = ev.windows(2).all(|w| w[1] <= w[0]) || ev.windows(2).all(|w| w[1] >= w[0]);
    r.line(
        6,
        rates.windows(2).all(|w| w[0] <= w[1]) && finite && mono,
        "evidence minimal <= per-event <= per-request; finite and monotone over threshold",
        format!(
            "levels [{}] rec/s; threshold 0.5..1.0 [{}] rec/s",
            fmt_series(&rates),
            fmt_series(&ev)
        ),
    );

    // 7
    r.line(
        7,
        oracle_hits == 0,
        "oracle clean on every shipped scenario x 3 policies x 10 seeds",
        format!("{} runs, {oracle_hits} violations", configs.len() * 3 * 10),
    );

    // 8
    let dir = PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../core/testdata/defects");
    let expected = [
        ("conforming", None),
        ("late-removal", Some("expiry-removal")),
        ("early-release", Some("make-before-break")),
        ("flip-before-install", Some("make-before-break")),
        ("double-terminal", Some("double-terminal")),
        ("post-tc-attempt", Some("commit-timeout")),
        ("aisi-reissue", Some("aisi-stability")),
        ("overlap-bound", Some("overlap-bound")),
    ];
    let paths: Vec<PathBuf> = expected.iter().map(|(n, _)| dir.join(format!("{n}.trace"))).collect();
    let (ok8, detail8) = match verify_paths(&paths) {
        Ok(found) => {
            let mut ok = true;
            let mut caught = 0;
            for ((_, class), p) in expected.iter().zip(&paths) {
                let v = &found[p];
                match class {
                    None => ok &= v.is_empty(),
                    Some(c) => {
                        let hit = v.iter().any(|x| x.starts_with(c));
                        ok &= hit;
                        caught += usize::from(hit);
                    }
                }
            }
            (ok, format!("{caught}/{} defects named, conforming clean", expected.len() - 1))
        }
        Err(e) => (false, e.to_string()),
    };
    r.line(8, ok8, "planted-defect corpus rejected with the right class", detail8);

    // 9
    let tmp = tempfile::tempdir().expect("tempdir");
    let mut ok9 = true;
    for s in SetupId::SHIPPED {
        let cfg = PathBuf::from(env!("CARGO_MANIFEST_DIR"))
            .join(format!("configs/{}.toml", s.to_string().to_ascii_lowercase()));
        for side in ["a", "b"] {
            let st = Command::new(env!("CARGO_BIN_EXE_aipaging"))
                .args(["run", "--seed", "1", "--config"])
                .arg(&cfg)
                .arg("--out")
                .arg(tmp.path().join(side))
                .output()
                .expect("spawn cli");
            ok9 &= st.status.success();
        }
    }
    let (ha, hb) = (hash_dir(&tmp.path().join("a")), hash_dir(&tmp.path().join("b")));
    r.line(
        9,
        ok9 && !ha.is_empty() && ha == hb,
        "rerun gives byte-identical trace and metrics files (sha256)",
        format!("{} files compared", ha.len()),
    );

    // 10
    let mut worst: f64 = 0.0;
    for i in 0..20u64 {
        let mut c = ScenarioConfig::preset(SetupId::SHIPPED[(i % 5) as usize]);
        c.policy = ALL_POLICIES[(i % 3) as usize];
        c.seed = 1_000 + i * 7919;
        c.sessions = 2 + (i % 5) as u32;
        c.horizon_ms = 2_000.0 + ((i * 373) % 3_000) as f64;
        c.relocation_probability = ((i * 37) % 10) as f64 / 10.0;
        let out = run_scenario(&c).expect("short run");
        let sampled = sampled_violation_rate(&out.trace, SimDuration::from_ms(1)).expect("sampler");
        worst = worst.max((sampled - out.report.violation_rate_percent).abs());
    }
    r.line(
        10,
        worst <= SAMPLER_TOLERANCE_PP,
        "interval violation rate within 0.1 pp of 1 ms sampling on 20 runs",
        format!("max difference {worst:.4} pp"),
    );

    println!(
        "acceptance: {} of 10 criteria passed",
        10 - r.failed
    );
    if r.failed > 0 {
        std::process::exit(1);
    }
}
