//! Quick single-run trainer for timing and hyperparameter checks.
//! Usage: train_probe <mode> <batch> <epochs> [hidden] [seed] [lr]
use std::time::Instant;

use attnguide::numcore::Rng;
use attnguide::seq2seq::{evaluate, train, Mode, ModelConfig, Seq2SeqModel, TrainingConfig};
use attnguide::taskgen::{DatasetBundle, Split, SplitConfig};

fn main() {
    let args: Vec<String> = std::env::args().collect();
    let mode = Mode::parse(args.get(1).map_or("ag", String::as_str)).unwrap();
    let batch: usize = args.get(2).map_or(16, |s| s.parse().unwrap());
    let epochs: usize = args.get(3).map_or(2, |s| s.parse().unwrap());
    let hidden: usize = args.get(4).map_or(512, |s| s.parse().unwrap());
    let seed: u64 = args.get(5).map_or(1, |s| s.parse().unwrap());
    let lr: f64 = args.get(6).map_or(1e-3, |s| s.parse().unwrap());
    let bundle = DatasetBundle::generate(seed, SplitConfig::default());
    let cfg = ModelConfig { hidden, attn_dim: hidden, ..ModelConfig::default() };
    let model = Seq2SeqModel::new(cfg, mode, &mut Rng::named(seed, "init"));
    let tc = TrainingConfig { max_epochs: epochs, batch_size: batch, seed, lr, ..TrainingConfig::default() };
    let t0 = Instant::now();
    let out = train(model, &bundle, &tc).unwrap();
    let secs = t0.elapsed().as_secs_f64();
    for r in &out.history {
        println!("ep {:3} loss {:.4} tok {:.4} ag {:.4} val {:.3}", r.epoch, r.train_loss, r.token_loss, r.guidance_loss, r.val_accuracy);
    }
    let accs: Vec<String> = Split::ALL.iter().map(|&s| format!("{}={:.3}", s, evaluate(&out.model, bundle.split(s)))).collect();
    println!("best epoch {} | {} | {:.1}s ({:.2}s/epoch)", out.best_epoch, accs.join(" "), secs, secs / epochs as f64);
}
