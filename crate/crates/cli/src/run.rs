//! `blendlab run`: episodes for every method × seed, in parallel, with
//! deterministic output.

use std::io::Write;
use std::path::{Path, PathBuf};

use blendlab::arbitration::{ArbitratorRegistry, Method};
use blendlab::simulator::{run_episode, EpisodeConfig, EpisodeLog, Metrics, Scenario, CSV_HEADER};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::{CliError, RunArgs, EXIT_INFEASIBLE, EXIT_OK};

pub const DEFAULT_OUT: &str = "blendlab-out";

/// Run configuration as read from a `--config` JSON file. Every field is
/// optional; command-line flags take precedence.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    pub scenario: Option<String>,
    pub methods: Option<Vec<String>>,
    pub seeds: Option<SeedSpec>,
    pub out: Option<PathBuf>,
    pub gamma: Option<f64>,
    pub k_h: Option<f64>,
    pub n_samples: Option<usize>,
    pub search_budget: Option<usize>,
}

/// Seeds as an explicit list or in the flag syntax.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum SeedSpec {
    List(Vec<u64>),
    Text(String),
}

impl RunConfig {
    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::config(format!("cannot read config {}: {e}", path.display())))?;
        serde_json::from_str(&text).map_err(|e| CliError::config(format!("invalid config {}: {e}", path.display())))
    }

    /// Overlays the flags given on the command line.
    pub fn merge(mut self, args: &RunArgs) -> Self {
        if let Some(s) = &args.scenario {
            self.scenario = Some(s.clone());
        }
        if let Some(m) = &args.methods {
            self.methods = Some(m.split(',').map(|s| s.trim().to_string()).collect());
        }
        if let Some(s) = &args.seeds {
            self.seeds = Some(SeedSpec::Text(s.clone()));
        }
        if let Some(o) = &args.out {
            self.out = Some(o.clone());
        }
        self.gamma = args.gamma.or(self.gamma);
        self.k_h = args.k_h.or(self.k_h);
        self.n_samples = args.n_samples.or(self.n_samples);
        self.search_budget = args.search_budget.or(self.search_budget);
        self
    }
}

/// Parses `0..19` (inclusive), `7`, or comma lists of both. Seeds must be
/// distinct.
pub fn parse_seeds(text: &str) -> Result<Vec<u64>, CliError> {
    let bad = |part: &str| CliError::config(format!("invalid seed {part:?} in {text:?}; use e.g. 0..19, 3 or 0,2,5"));
    let mut seeds = Vec::new();
    for part in text.split(',').map(str::trim) {
        if let Some((a, b)) = part.split_once("..") {
            let lo: u64 = a.trim().parse().map_err(|_| bad(part))?;
            let hi: u64 = b.trim().trim_start_matches('=').parse().map_err(|_| bad(part))?;
            if hi < lo {
                return Err(bad(part));
            }
            seeds.extend(lo..=hi);
        } else {
            seeds.push(part.parse().map_err(|_| bad(part))?);
        }
    }
    check_distinct(&seeds)?;
    Ok(seeds)
}

fn check_distinct(seeds: &[u64]) -> Result<(), CliError> {
    let mut sorted = seeds.to_vec();
    sorted.sort_unstable();
    if let Some(w) = sorted.windows(2).find(|w| w[0] == w[1]) {
        return Err(CliError::config(format!("seed {} listed twice", w[0])));
    }
    Ok(())
}

/// A validated run.
#[derive(Debug, Clone)]
pub struct RunPlan {
    pub scenario: Scenario,
    pub methods: Vec<Method>,
    pub seeds: Vec<u64>,
    pub out: PathBuf,
    pub template: EpisodeConfig,
}

impl RunPlan {
    pub fn resolve(config: RunConfig, registry: &ArbitratorRegistry) -> Result<Self, CliError> {
        let name = config
            .scenario
            .ok_or_else(|| CliError::config("no scenario given; pass --scenario or set it in --config"))?;
        let scenario = Scenario::load(&name).map_err(|e| CliError::config(e.to_string()))?;

        let valid = registry.names().join(", ");
        let names = config.methods.unwrap_or_else(|| vec![Method::Psc.name().to_string()]);
        let mut methods = Vec::new();
        for n in &names {
            let unknown = || CliError::config(format!("unknown method {n:?}; valid methods: {valid}"));
            registry.resolve(n).map_err(|_| unknown())?;
            let m: Method = n.parse().map_err(|_| unknown())?;
            if methods.contains(&m) {
                return Err(CliError::config(format!("method {n:?} listed twice")));
            }
            methods.push(m);
        }
        if methods.is_empty() {
            return Err(CliError::config(format!("no methods given; valid methods: {valid}")));
        }

        let seeds = match config.seeds {
            None => vec![0],
            Some(SeedSpec::Text(t)) => parse_seeds(&t)?,
            Some(SeedSpec::List(l)) if l.is_empty() => return Err(CliError::config("empty seed list")),
            Some(SeedSpec::List(l)) => {
                check_distinct(&l)?;
                l
            }
        };

        let mut template = EpisodeConfig::new(methods[0]);
        if let Some(g) = config.gamma {
            template.params.gamma = g;
        }
        template.arbitration.k_h = config.k_h.or(template.arbitration.k_h);
        if let Some(n) = config.n_samples {
            template.arbitration.n_samples = n;
        }
        if let Some(b) = config.search_budget {
            template.arbitration.search_budget = b;
        }
        template.validate().map_err(|e| CliError::config(e.to_string()))?;

        Ok(Self {
            scenario,
            methods,
            seeds,
            out: config.out.unwrap_or_else(|| PathBuf::from(DEFAULT_OUT)),
            template,
        })
    }

    /// Every (method, seed) pair in output order.
    pub fn jobs(&self) -> Vec<(Method, u64)> {
        self.methods
            .iter()
            .flat_map(|&m| self.seeds.iter().map(move |&s| (m, s)))
            .collect()
    }

    pub fn episode_file(&self, method: Method, seed: u64) -> PathBuf {
        let name = self.scenario.name.replace(['/', '\\'], "_");
        self.out
            .join("episodes")
            .join(format!("{name}-{method}-seed{seed}.jsonl"))
    }
}

/// One finished episode.
pub struct Outcome {
    pub method: Method,
    pub seed: u64,
    pub log: EpisodeLog,
    pub metrics: Metrics,
}

/// Runs every job in parallel; results come back in [`RunPlan::jobs`] order.
pub fn execute(plan: &RunPlan, registry: &ArbitratorRegistry) -> Result<Vec<Outcome>, CliError> {
    plan.jobs()
        .into_par_iter()
        .map(|(method, seed)| {
            let config = EpisodeConfig {
                method,
                seed,
                ..plan.template.clone()
            };
            run_episode(&plan.scenario, config, registry)
                .map(|(log, metrics)| Outcome {
                    method,
                    seed,
                    log,
                    metrics,
                })
                .map_err(|e| CliError::config(format!("{method} seed {seed}: {e}")))
        })
        .collect()
}

pub fn metrics_csv(scenario: &str, outcomes: &[Outcome]) -> String {
    let mut csv = String::from(CSV_HEADER);
    csv.push('\n');
    for o in outcomes {
        csv.push_str(&o.metrics.csv_row(scenario, o.method.name(), o.seed));
        csv.push('\n');
    }
    csv
}

/// Writes through a temporary file in the same directory and renames it
/// into place, so readers never see a partial file.
pub fn write_atomic(path: &Path, contents: &str) -> Result<(), CliError> {
    let io = |e: std::io::Error| CliError::config(format!("cannot write {}: {e}", path.display()));
    let dir = path.parent().unwrap_or(Path::new("."));
    let mut tmp = tempfile::NamedTempFile::new_in(dir).map_err(io)?;
    tmp.write_all(contents.as_bytes()).map_err(io)?;
    tmp.persist(path).map_err(|e| io(e.error))?;
    Ok(())
}

pub fn cmd_run(args: &RunArgs) -> Result<i32, CliError> {
    let config = match &args.config {
        Some(path) => RunConfig::load(path)?,
        None => RunConfig::default(),
    };
    let registry = ArbitratorRegistry::standard();
    let plan = RunPlan::resolve(config.merge(args), &registry)?;
    let episodes_dir = plan.out.join("episodes");
    std::fs::create_dir_all(&episodes_dir)
        .map_err(|e| CliError::config(format!("cannot create {}: {e}", episodes_dir.display())))?;

    let outcomes = execute(&plan, &registry)?;
    outcomes
        .par_iter()
        .try_for_each(|o| write_atomic(&plan.episode_file(o.method, o.seed), &o.log.to_jsonl()))?;
    let csv_path = plan.out.join("metrics.csv");
    write_atomic(&csv_path, &metrics_csv(&plan.scenario.name, &outcomes))?;

    for &method in &plan.methods {
        let mine: Vec<&Outcome> = outcomes.iter().filter(|o| o.method == method).collect();
        let collisions = mine.iter().filter(|o| o.metrics.collision).count();
        let reached = mine.iter().filter(|o| o.metrics.time_to_goal.is_some()).count();
        let infeasible: usize = mine.iter().map(|o| o.metrics.infeasible_steps).sum();
        println!(
            "{}: {} episodes, {reached} reached the goal, {collisions} collided, {infeasible} infeasible steps",
            method,
            mine.len()
        );
    }
    println!("wrote {}", csv_path.display());

    Ok(exit_code(
        &outcomes
            .iter()
            .map(|o| (o.method, o.seed, &o.metrics))
            .collect::<Vec<_>>(),
    ))
}

/// 0, or 2 (with the offending episodes on stderr) when any arbitration step
/// failed.
pub fn exit_code(results: &[(Method, u64, &Metrics)]) -> i32 {
    let infeasible: Vec<String> = results
        .iter()
        .filter(|(_, _, m)| m.infeasible_steps > 0)
        .map(|(method, seed, _)| format!("{method} seed {seed}"))
        .collect();
    if infeasible.is_empty() {
        EXIT_OK
    } else {
        eprintln!("infeasible arbitration steps in: {}", infeasible.join(", "));
        EXIT_INFEASIBLE
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn seed_syntax() {
        assert_eq!(parse_seeds("0..19").unwrap(), (0..20).collect::<Vec<_>>());
        assert_eq!(parse_seeds("4").unwrap(), vec![4]);
        assert_eq!(parse_seeds("0, 2,5..6").unwrap(), vec![0, 2, 5, 6]);
        assert_eq!(parse_seeds("3..=4").unwrap(), vec![3, 4]);
        for bad in ["", "a", "5..2", "1..x", "1,1", "0..3,2", "-1"] {
            assert_eq!(parse_seeds(bad).unwrap_err().code, crate::EXIT_CONFIG, "{bad}");
        }
    }

    #[test]
    fn flags_override_the_file() {
        let file: RunConfig = serde_json::from_str(
            r#"{"scenario":"fig2","methods":["ltb"],"seeds":[1,2],"gamma":0.3,"k_h":0.5,"out":"x"}"#,
        )
        .unwrap();
        let args = RunArgs {
            methods: Some("lb, psc".into()),
            gamma: Some(0.7),
            ..RunArgs::default()
        };
        let merged = file.merge(&args);
        assert_eq!(merged.methods, Some(vec!["lb".to_string(), "psc".to_string()]));
        assert_eq!(merged.gamma, Some(0.7));
        assert_eq!(merged.k_h, Some(0.5));
        assert_eq!(merged.seeds, Some(SeedSpec::List(vec![1, 2])));
        assert_eq!(merged.scenario.as_deref(), Some("fig2"));
    }

    #[test]
    fn unknown_config_keys_are_rejected() {
        assert!(serde_json::from_str::<RunConfig>(r#"{"scenaro":"fig2"}"#).is_err());
    }

    #[test]
    fn plans_validate_names_and_parameters() {
        let registry = ArbitratorRegistry::standard();
        let plan = |json: &str| RunPlan::resolve(serde_json::from_str(json).unwrap(), &registry);
        let ok = plan(r#"{"scenario":"fig3","methods":["lb","psc"],"seeds":"0..2","k_h":1.0}"#).unwrap();
        assert_eq!(ok.jobs().len(), 6);
        assert_eq!(ok.jobs()[3], (Method::Psc, 0));
        assert_eq!(ok.template.arbitration.k_h, Some(1.0));
        assert!(ok.episode_file(Method::Lb, 2).ends_with("episodes/fig3-lb-seed2.jsonl"));

        let err = plan(r#"{"scenario":"fig3","methods":["blend"]}"#).unwrap_err();
        assert!(err.message.contains("ctb, lb, ltb, ltbo, psc"), "{err}");
        assert!(plan(r#"{"scenario":"nowhere"}"#).is_err());
        assert!(plan(r#"{}"#).is_err());
        assert!(plan(r#"{"scenario":"fig3","gamma":-1}"#).is_err());
        assert!(plan(r#"{"scenario":"fig3","methods":["lb","lb"]}"#).is_err());
    }

    #[test]
    fn infeasible_steps_exit_with_two() {
        let clean = Metrics {
            min_clearance: 1.0,
            collision: false,
            path_length: 10.0,
            time_to_goal: Some(10.0),
            agreeability_score: -0.1,
            steps: 40,
            infeasible_steps: 0,
        };
        let failed = Metrics {
            infeasible_steps: 3,
            ..clean.clone()
        };
        assert_eq!(exit_code(&[(Method::Psc, 0, &clean), (Method::Lb, 1, &clean)]), EXIT_OK);
        assert_eq!(
            exit_code(&[(Method::Psc, 0, &clean), (Method::Lb, 1, &failed)]),
            EXIT_INFEASIBLE
        );
    }

    #[test]
    fn atomic_write_replaces_contents() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m.csv");
        write_atomic(&path, "a\n").unwrap();
        write_atomic(&path, "b\n").unwrap();
        assert_eq!(std::fs::read_to_string(&path).unwrap(), "b\n");
        assert_eq!(std::fs::read_dir(dir.path()).unwrap().count(), 1);
    }
}
