use std::path::PathBuf;

use anyhow::{Context, Result};
use clap::Args;
use serde::{Deserialize, Serialize};

use signalcast::rng::sub_seed;
use signalcast::synth::{benchmark_spec, gen_corpus, gen_target_series, grid_locations, SynthSpec, TargetKind};
use signalcast::text::{StopList, TextPipeline};
use signalcast::vsm::write_posts_jsonl;

use crate::common::{default_out, resolve, Outputs};
use crate::Common;

#[derive(Args, Serialize)]
pub struct SynthArgs {
    /// Generator spec (JSON); the planted-support benchmark when absent.
    #[arg(long)]
    spec: Option<PathBuf>,
    #[arg(long)]
    days: Option<usize>,
    /// Number of locations (replaces the spec's locations with a grid).
    #[arg(long)]
    locations: Option<usize>,
    #[arg(long)]
    posts_per_bin: Option<usize>,
    /// flu_like or rain_like.
    #[arg(long, value_parser = parse_target)]
    target: Option<TargetKind>,
}

fn parse_target(s: &str) -> Result<TargetKind, String> {
    serde_json::from_value(serde_json::Value::String(s.into()))
        .map_err(|_| format!("unknown target {s:?} (flu_like, rain_like)"))
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SynthConfig {
    pub seed: u64,
    pub out: PathBuf,
    pub spec: Option<PathBuf>,
    pub days: Option<usize>,
    pub locations: Option<usize>,
    pub posts_per_bin: Option<usize>,
    pub target: Option<TargetKind>,
}

impl Default for SynthConfig {
    fn default() -> Self {
        SynthConfig {
            seed: 0,
            out: default_out(),
            spec: None,
            days: None,
            locations: None,
            posts_per_bin: None,
            target: None,
        }
    }
}

pub fn run(common: &Common, args: SynthArgs) -> Result<()> {
    let cfg: SynthConfig = resolve(common, &args)?;
    let mut spec: SynthSpec = match &cfg.spec {
        Some(p) => {
            let text = std::fs::read_to_string(p).with_context(|| format!("reading {}", p.display()))?;
            serde_json::from_str(&text).with_context(|| format!("parsing spec {}", p.display()))?
        }
        None => benchmark_spec(cfg.seed),
    };
    if let Some(d) = cfg.days {
        spec.days = d;
    }
    if let Some(n) = cfg.locations {
        spec.locations = grid_locations(n);
    }
    if let Some(n) = cfg.posts_per_bin {
        spec.posts_per_bin = n;
    }
    if let Some(t) = cfg.target {
        spec.target_kind = t;
    }
    spec.seed = sub_seed(cfg.seed, 1);
    spec.validate()?;

    let truth = gen_target_series(spec.target_kind, spec.days, spec.start, &spec.region_names(), sub_seed(cfg.seed, 0))?;
    let generated = gen_corpus(&spec, &truth)?;
    // Ingestion check: every post must parse and bin.
    generated.corpus(&TextPipeline::new(StopList::english(), true))?;

    let mut out = Outputs::new(&cfg.out);
    let mut posts = Vec::new();
    write_posts_jsonl(&mut posts, &generated.posts)?;
    out.add("posts.jsonl", posts);
    let mut t = Vec::new();
    truth.write_csv(&mut t)?;
    out.add("truth.csv", t);
    out.add_json("manifest.json", &generated.manifest)?;
    out.add_json("spec.json", &spec)?;
    out.commit("synth", &cfg)
}
