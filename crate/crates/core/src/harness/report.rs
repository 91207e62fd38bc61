use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::DensityRegime;
use crate::error::{invalid, Result};

pub const REPORT_SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PolicyKind {
    Random,
    SourceOnly,
    DanAdapted,
    TargetOracle,
}

impl PolicyKind {
    pub const ALL: [PolicyKind; 4] = [
        PolicyKind::Random,
        PolicyKind::SourceOnly,
        PolicyKind::DanAdapted,
        PolicyKind::TargetOracle,
    ];

    pub fn name(self) -> &'static str {
        match self {
            PolicyKind::Random => "random",
            PolicyKind::SourceOnly => "source_only",
            PolicyKind::DanAdapted => "dan_adapted",
            PolicyKind::TargetOracle => "target_oracle",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpisodeRow {
    pub episode: usize,
    pub world_seed: u64,
    pub episode_seed: u64,
    pub distance_flown: f64,
    pub crashed: bool,
    pub trees_passed: usize,
    pub trees_hit: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PolicyCard {
    pub kind: PolicyKind,
    pub checkpoint: Option<String>,
    pub episodes: usize,
    pub mean_distance: f64,
    pub crashes: usize,
    pub trees_passed: usize,
    pub trees_hit: usize,
    pub avoidance_rate: f64,
}

/// Trees passed over trees encountered; 1 when nothing was encountered.
fn avoidance_rate(passed: usize, hit: usize) -> f64 {
    if passed + hit == 0 {
        1.0
    } else {
        passed as f64 / (passed + hit) as f64
    }
}

impl PolicyCard {
    fn from_rows(kind: PolicyKind, checkpoint: Option<String>, rows: &[EpisodeRow]) -> Self {
        let passed = rows.iter().map(|r| r.trees_passed).sum();
        let hit = rows.iter().map(|r| r.trees_hit).sum();
        Self {
            kind,
            checkpoint,
            episodes: rows.len(),
            mean_distance: rows.iter().map(|r| r.distance_flown).sum::<f64>() / rows.len().max(1) as f64,
            crashes: rows.iter().filter(|r| r.crashed).count(),
            trees_passed: passed,
            trees_hit: hit,
            avoidance_rate: avoidance_rate(passed, hit),
        }
    }
}

/// Paired one-sided sign test of `better` against `worse`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Comparison {
    pub better: PolicyKind,
    pub worse: PolicyKind,
    pub wins: usize,
    pub losses: usize,
    pub ties: usize,
    pub p_value: f64,
}

impl Comparison {
    fn paired(better: PolicyKind, a: &[EpisodeRow], worse: PolicyKind, b: &[EpisodeRow]) -> Self {
        let (mut wins, mut losses, mut ties) = (0, 0, 0);
        for (x, y) in a.iter().zip(b) {
            match x.distance_flown.total_cmp(&y.distance_flown) {
                std::cmp::Ordering::Greater => wins += 1,
                std::cmp::Ordering::Less => losses += 1,
                std::cmp::Ordering::Equal => ties += 1,
            }
        }
        Self {
            better,
            worse,
            wins,
            losses,
            ties,
            p_value: sign_test(wins, losses),
        }
    }
}

/// P(Binomial(wins + losses, ½) ≥ wins); ties are dropped beforehand.
pub fn sign_test(wins: usize, losses: usize) -> f64 {
    let n = wins + losses;
    if n == 0 {
        return 1.0;
    }
    let ln2n = n as f64 * std::f64::consts::LN_2;
    let mut ln_choose = 0.0;
    let mut p = 0.0;
    for k in 0..=n {
        if k >= wins {
            p += (ln_choose - ln2n).exp();
        }
        ln_choose += ((n - k) as f64).ln() - ((k + 1) as f64).ln();
    }
    p.min(1.0)
}

/// The pairs each run tests: the headline one first.
const COMPARISONS: [(PolicyKind, PolicyKind); 3] = [
    (PolicyKind::DanAdapted, PolicyKind::SourceOnly),
    (PolicyKind::SourceOnly, PolicyKind::Random),
    (PolicyKind::TargetOracle, PolicyKind::DanAdapted),
];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Report {
    pub schema_version: u32,
    pub scenario: String,
    pub density: DensityRegime,
    pub lambda: f64,
    /// (λ, mean validation distance) per grid point.
    pub validation: Vec<(f64, f64)>,
    pub cards: Vec<PolicyCard>,
    pub comparisons: Vec<Comparison>,
    #[serde(skip)]
    pub episodes: Vec<(PolicyKind, Vec<EpisodeRow>)>,
}

impl Report {
    pub fn new(
        scenario: &str,
        density: DensityRegime,
        lambda: f64,
        validation: Vec<(f64, f64)>,
        runs: Vec<(PolicyKind, Option<String>, Vec<EpisodeRow>)>,
    ) -> Self {
        let cards = runs.iter().map(|(k, c, rows)| PolicyCard::from_rows(*k, c.clone(), rows)).collect();
        let episodes: Vec<_> = runs.into_iter().map(|(k, _, rows)| (k, rows)).collect();
        let rows_of = |k: PolicyKind| episodes.iter().find(|e| e.0 == k).map(|e| e.1.as_slice());
        let comparisons = COMPARISONS
            .iter()
            .filter_map(|&(a, b)| Some(Comparison::paired(a, rows_of(a)?, b, rows_of(b)?)))
            .collect();
        Self {
            schema_version: REPORT_SCHEMA_VERSION,
            scenario: scenario.to_string(),
            density,
            lambda,
            validation,
            cards,
            comparisons,
            episodes,
        }
    }

    pub fn card(&self, kind: PolicyKind) -> Option<&PolicyCard> {
        self.cards.iter().find(|c| c.kind == kind)
    }

    pub fn comparison(&self, better: PolicyKind, worse: PolicyKind) -> Option<&Comparison> {
        self.comparisons.iter().find(|c| c.better == better && c.worse == worse)
    }

    pub fn episodes_csv(&self) -> String {
        let mut s = String::from(EPISODE_HEADER);
        for (kind, rows) in &self.episodes {
            push_rows(&mut s, kind.name(), rows);
        }
        s
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)? + "\n")
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let r: Report = serde_json::from_str(text).map_err(|e| invalid(format!("report: {e}")))?;
        if r.schema_version != REPORT_SCHEMA_VERSION {
            return Err(invalid(format!("unsupported report schema version {}", r.schema_version)));
        }
        Ok(r)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_json(&fs::read_to_string(path)?)
    }

    pub fn write(&self, out: &Path) -> Result<()> {
        fs::write(out.join("episodes.csv"), self.episodes_csv())?;
        fs::write(out.join("summary.csv"), summary_csv(&rows_for(std::slice::from_ref(self))?))?;
        fs::write(out.join("report.json"), self.to_json()?)?;
        Ok(())
    }
}

const EPISODE_HEADER: &str = "policy,episode,world_seed,episode_seed,distance_flown,crashed,trees_passed,trees_hit\n";

fn push_rows(s: &mut String, label: &str, rows: &[EpisodeRow]) {
    for r in rows {
        let _ = writeln!(
            s,
            "{label},{},{},{},{},{},{},{}",
            r.episode,
            r.world_seed,
            r.episode_seed,
            r.distance_flown,
            r.crashed as u8,
            r.trees_passed,
            r.trees_hit
        );
    }
}

/// Columns: `policy,episode,world_seed,episode_seed,distance_flown,crashed,trees_passed,trees_hit`.
pub fn episodes_csv(label: &str, rows: &[EpisodeRow]) -> String {
    let mut s = String::from(EPISODE_HEADER);
    push_rows(&mut s, label, rows);
    s
}

pub(super) fn validation_csv(v: &[(f64, f64)]) -> String {
    let mut s = String::from("lambda,mean_distance\n");
    for (l, d) in v {
        let _ = writeln!(s, "{l},{d}");
    }
    s
}

#[derive(Debug, Clone, PartialEq)]
pub struct SummaryRow {
    pub scenario: String,
    pub density: String,
    pub policy: PolicyKind,
    pub episodes: usize,
    pub mean_distance: f64,
    pub crashes: usize,
    pub trees_passed: usize,
    pub trees_hit: usize,
    pub avoidance_rate: f64,
    /// Sign test of this policy against the next weaker one.
    pub versus: Option<PolicyKind>,
    pub wins: usize,
    pub losses: usize,
    pub ties: usize,
    pub p_value: Option<f64>,
}

fn merge(scenario: &str, density: &str, group: &[&Report]) -> Vec<SummaryRow> {
    PolicyKind::ALL
        .iter()
        .map(|&kind| {
            let cards: Vec<&PolicyCard> = group.iter().filter_map(|r| r.card(kind)).collect();
            let episodes: usize = cards.iter().map(|c| c.episodes).sum();
            let passed = cards.iter().map(|c| c.trees_passed).sum();
            let hit = cards.iter().map(|c| c.trees_hit).sum();
            let weighted: f64 = cards.iter().map(|c| c.mean_distance * c.episodes as f64).sum();
            let cmp: Vec<&Comparison> = group
                .iter()
                .flat_map(|r| r.comparisons.iter().filter(|c| c.better == kind))
                .collect();
            let (wins, losses, ties) = cmp
                .iter()
                .fold((0, 0, 0), |a, c| (a.0 + c.wins, a.1 + c.losses, a.2 + c.ties));
            SummaryRow {
                scenario: scenario.to_string(),
                density: density.to_string(),
                policy: kind,
                episodes,
                mean_distance: if episodes == 0 { 0.0 } else { weighted / episodes as f64 },
                crashes: cards.iter().map(|c| c.crashes).sum(),
                trees_passed: passed,
                trees_hit: hit,
                avoidance_rate: avoidance_rate(passed, hit),
                versus: cmp.first().map(|c| c.worse),
                wins,
                losses,
                ties,
                p_value: (!cmp.is_empty()).then(|| sign_test(wins, losses)),
            }
        })
        .collect()
}

fn rows_for(reports: &[Report]) -> Result<Vec<SummaryRow>> {
    if reports.is_empty() {
        return Err(invalid("summarize needs at least one report"));
    }
    let mut keys: Vec<(String, DensityRegime)> = Vec::new();
    for r in reports {
        if r.schema_version != REPORT_SCHEMA_VERSION {
            return Err(invalid(format!("report schema {} ≠ {REPORT_SCHEMA_VERSION}", r.schema_version)));
        }
        if PolicyKind::ALL.iter().any(|&k| r.card(k).is_none()) {
            return Err(invalid(format!("report for `{}` lacks a policy card", r.scenario)));
        }
        let key = (r.scenario.clone(), r.density);
        if !keys.contains(&key) {
            keys.push(key);
        }
    }
    let mut rows = Vec::new();
    for (scenario, density) in &keys {
        let group: Vec<&Report> = reports.iter().filter(|r| &r.scenario == scenario && r.density == *density).collect();
        rows.extend(merge(scenario, density.label(), &group));
    }
    Ok(rows)
}

/// Per scenario × density rows (reports sharing both are pooled, weighted
/// by episode count) followed by `total` rows over everything.
pub fn summarize(reports: &[Report]) -> Result<Vec<SummaryRow>> {
    let mut rows = rows_for(reports)?;
    let all: Vec<&Report> = reports.iter().collect();
    rows.extend(merge("total", "all", &all));
    Ok(rows)
}

pub fn summary_csv(rows: &[SummaryRow]) -> String {
    let mut s = String::from(
        "scenario,density,policy,episodes,mean_distance,crashes,trees_passed,trees_hit,avoidance_rate,versus,wins,losses,ties,p_value\n",
    );
    for r in rows {
        let _ = writeln!(
            s,
            "{},{},{},{},{},{},{},{},{},{},{},{},{},{}",
            r.scenario,
            r.density,
            r.policy.name(),
            r.episodes,
            r.mean_distance,
            r.crashes,
            r.trees_passed,
            r.trees_hit,
            r.avoidance_rate,
            r.versus.map(|v| v.name()).unwrap_or(""),
            r.wins,
            r.losses,
            r.ties,
            r.p_value.map(|p| p.to_string()).unwrap_or_default()
        );
    }
    s
}
