//! Trains on one-bar images and prints reconstruction error and the
//! loading structure at the last timestep.
//!
//! ```text
//! cargo run --release --example one_bar -- [row|replicate] [iterations] [lambda] [seed] [static]
//! ```

use std::time::Instant;

use dlgfa::data::{generate_one_bar, split_dataset, BarMode, SplitSpec};
use dlgfa::eval::{mse_test, sparsity_report, top_features_per_factor, NoiseMode};
use dlgfa::model::{DlgfaModel, GroupSpec, ModelConfig};
use dlgfa::optim::{train_epoch, OptimConfig, TrainState};

fn main() -> dlgfa::Result<()> {
    let args: Vec<String> = std::env::args().skip(1).collect();
    let arg = |i: usize, default: &str| args.get(i).cloned().unwrap_or_else(|| default.to_owned());
    let mode = match arg(0, "row").as_str() {
        "replicate" => BarMode::Replicate { timesteps: 8 },
        _ => BarMode::RowAsTime,
    };
    let iterations: u64 = arg(1, "10000").parse().expect("iterations");
    let lambda: f64 = arg(2, "5").parse().expect("lambda");
    let seed: u64 = arg(3, "0").parse().expect("seed");

    let size = 8;
    let ds = generate_one_bar(2000, size, 0.05, seed, mode)?;
    let (train, _val, test) = split_dataset(&ds, &SplitSpec { seed, ..SplitSpec::default() })?;
    let groups = GroupSpec::new(vec![size; size], (1..=size).map(|r| format!("row{r}")).collect())?;
    let mut cfg = ModelConfig::new(8, 32, 1, 8, groups);
    cfg.static_mode = arg(4, "") == "static";
    let oc = OptimConfig { lambda, seed, ..OptimConfig::default() };
    let mut model = DlgfaModel::new(cfg, seed)?;
    let mut state = TrainState::new(seed.wrapping_add(1));
    let start = Instant::now();
    while state.iterations < iterations {
        let terms = train_epoch(&mut model, &train, &oc, &mut state)?;
        if state.epochs % 20 == 0 {
            println!(
                "epoch {:4} iter {:6} obj/elem {:9.4} kl {:9.2} zero {:4}/{} mse {:.5} ({:.0}s)",
                state.epochs,
                state.iterations,
                terms.objective_per_element(),
                terms.kl,
                model.loadings.zero_column_count(),
                model.loadings.column_count(),
                mse_test(&model, &test, NoiseMode::Zero)?,
                start.elapsed().as_secs_f64()
            );
        }
    }
    let report = sparsity_report(&model);
    let ranking = top_features_per_factor(&report, 8, 3)?;
    println!("mse_test {:.5}", mse_test(&model, &test, NoiseMode::Zero)?);
    println!("zero fraction {:.3}", report.zero_fraction());
    println!("distinct top groups at t=8: {}", ranking.distinct_top_groups());
    for t in [1, 8] {
        println!("t={t}\n{}", report.to_text(t)?);
    }
    println!("elapsed {:.0}s", start.elapsed().as_secs_f64());
    Ok(())
}
