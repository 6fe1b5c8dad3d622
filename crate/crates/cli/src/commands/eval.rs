use std::fs::File;
use std::io::BufReader;
use std::path::PathBuf;

use anyhow::Context;
use clap::Args;
use shardsearch::evalkit::{evaluate_run, filter_queries, Qrels, RunFile};

use super::{create, read_queries};
use crate::config::{overlay_vec, AppConfig};

#[derive(Debug, Args)]
pub struct EvalArgs {
    /// Run file in TREC format
    #[arg(long)]
    pub run: PathBuf,
    /// Relevance judgments, `qid 0 docid grade` per line
    #[arg(long)]
    pub qrels: PathBuf,
    /// Restrict evaluation to these queries after dropping one-token and unjudged ones
    #[arg(long)]
    pub queries: Option<PathBuf>,
    /// Recall cutoffs (comma-separated)
    #[arg(long, value_delimiter = ',', env = "SHARDSEARCH_RECALL_CUTOFFS")]
    pub recall_cutoffs: Vec<usize>,
    /// Precision cutoffs (comma-separated)
    #[arg(long, value_delimiter = ',', env = "SHARDSEARCH_PRECISION_CUTOFFS")]
    pub precision_cutoffs: Vec<usize>,
    /// Ranks considered for MRR (whole run when omitted)
    #[arg(long, env = "SHARDSEARCH_MRR_DEPTH")]
    pub mrr_depth: Option<usize>,
    /// Also write the JSON report to this file
    #[arg(long)]
    pub json_out: Option<PathBuf>,
}

pub fn eval(args: EvalArgs, mut cfg: AppConfig) -> anyhow::Result<()> {
    overlay_vec(&mut cfg.metrics.recall_cutoffs, args.recall_cutoffs);
    overlay_vec(&mut cfg.metrics.precision_cutoffs, args.precision_cutoffs);
    if args.mrr_depth.is_some() {
        cfg.metrics.mrr_depth = args.mrr_depth;
    }
    cfg.validate()?;
    let open = |p: &PathBuf| File::open(p).map(BufReader::new).with_context(|| format!("opening {}", p.display()));
    let mut qrels = Qrels::parse(open(&args.qrels)?).with_context(|| format!("reading {}", args.qrels.display()))?;
    let run = RunFile::parse(open(&args.run)?).with_context(|| format!("reading {}", args.run.display()))?;
    if let Some(path) = &args.queries {
        let queries = read_queries(path)?;
        let kept = filter_queries(&queries, &qrels);
        log::info!("evaluating {} of {} queries", kept.len(), queries.len());
        let mut restricted = Qrels::default();
        for (qid, _) in &kept {
            for (doc, &grade) in qrels.judgments(qid).into_iter().flatten() {
                restricted.insert(qid, doc, grade);
            }
        }
        qrels = restricted;
    }
    let report = evaluate_run(&run, &qrels, &cfg.metrics)?;
    let json = report.to_json();
    if let Some(path) = &args.json_out {
        let mut w = create(path)?;
        std::io::Write::write_all(&mut w, json.as_bytes())?;
        std::io::Write::write_all(&mut w, b"\n")?;
        std::io::Write::flush(&mut w)?;
    }
    println!("{json}");
    println!();
    print!("{}", report.to_table());
    Ok(())
}
