#![allow(dead_code)]

use std::path::Path;
use std::process::{Command, Output};

pub fn coipo(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_coipo"))
        .current_dir(dir)
        .env_remove("COIPO_SEED")
        .env("RUST_LOG", "warn")
        .args(args)
        .output()
        .expect("binary runs")
}

pub fn ok(out: &Output) {
    assert!(out.status.success(), "stderr: {}", String::from_utf8_lossy(&out.stderr));
}

pub const PROMPTS: &str = "Is the following review positive or negative? the film was great\n\
Decide the topic of this sentence: the team won the final\n\
Read the thing and tell if it is hot or cold. the snow tonight\n";

/// perturb → build-dataset → train → eval → report on the bundled suite.
pub fn run_pipeline(d: &Path) {
    std::fs::write(d.join("prompts.txt"), PROMPTS).unwrap();
    ok(&coipo(d, &["perturb", "--in", "prompts.txt", "--out", "noisy.jsonl"]));
    ok(&coipo(
        d,
        &["build-dataset", "--out", "pairs.jsonl", "--eval-out", "cases.jsonl"],
    ));
    for (method, name) in [("sft", "sft"), ("coipo", "coipo")] {
        let ck = format!("{name}.ckpt.json");
        let metrics = format!("{name}.metrics.jsonl");
        ok(&coipo(
            d,
            &[
                "train",
                "--dataset",
                "pairs.jsonl",
                "--method",
                method,
                "--out",
                &ck,
                "--metrics",
                &metrics,
            ],
        ));
        let report = format!("{name}.report.json");
        ok(&coipo(
            d,
            &[
                "eval",
                "--checkpoint",
                &ck,
                "--cases",
                "cases.jsonl",
                "--name",
                name,
                "--out",
                &report,
            ],
        ));
    }
    ok(&coipo(
        d,
        &[
            "report",
            "--in",
            "sft.report.json",
            "coipo.report.json",
            "--out",
            "grid.csv",
        ],
    ));
}
