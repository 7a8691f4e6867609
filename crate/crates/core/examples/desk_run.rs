//! Trains the desk-scale preset on a generated corpus, saves the model and
//! evaluates it on the validation files.
//!
//! Usage: desk_run [key=value ...] with keys seconds, dir, batch, lr_initial,
//! lr_final, clip, tau_initial, tau_change, target.

use std::time::Instant;

use nsc_core::{codec, fixture, TrainConfig, Trainer};

fn main() -> nsc_core::Result<()> {
    let mut cfg = TrainConfig::desk_scale();
    let mut seconds = 5.0;
    let mut dir = String::from("/tmp/nsc_desk");
    for arg in std::env::args().skip(1) {
        let (k, v) = arg.split_once('=').expect("arguments are key=value");
        let num = || v.parse::<f64>().expect("numeric value");
        match k {
            "seconds" => seconds = num(),
            "dir" => dir = v.to_string(),
            "batch" => cfg.batch_size = num() as usize,
            "lr_initial" => cfg.lr_initial = num(),
            "lr_final" => cfg.lr_final = num(),
            "clip" => cfg.grad_clip = num(),
            "tau_initial" => cfg.tau_initial = num(),
            "tau_change" => cfg.tau_change = num(),
            "target" => cfg.target_bps = num(),
            _ => panic!("unknown key {k}"),
        }
    }
    let dir = std::path::Path::new(&dir);
    let corpus = dir.join("corpus");
    fixture::write_corpus(&corpus, 64, seconds, 42)?;
    let start = Instant::now();
    let (mut trainer, split) = Trainer::from_corpus(&corpus, cfg)?;
    let mut best = None;
    while trainer.state.epoch < trainer.cfg.total_epochs() {
        let t = Instant::now();
        if let Some(m) = trainer.run_epoch()? {
            best = Some(m);
        }
        let row = trainer.log.last().unwrap();
        println!("{} ({:.1}s)", row.csv_row(), t.elapsed().as_secs_f64());
        let bins = &trainer.quantizer.bins;
        eprintln!("sigma {:.1} bins {:.3}..{:.3}", trainer.quantizer.sigma(), bins[0], bins[bins.len() - 1]);
    }
    let model = match best {
        Some(m) => m,
        None => trainer.snapshot()?,
    };
    model.save(dir.join("model.nscm"))?;
    println!("trained in {:.1}s", start.elapsed().as_secs_f64());
    let report = codec::evaluate_files(&model, &split.validation, false);
    print!("{}", report.to_csv());
    Ok(())
}
