// Scratch probe for tuning the desk-scale benchmark (not shipped).
use cil_core::data::{gen_synthetic, SynthConfig};
use cil_core::trainer::{
    run_cil_with_base, train_base_phase, ModelConfig, Strategy, TrainConfig,
};
use cil_core::PhasePlan;

struct Combo {
    name: &'static str,
    lr0: f64,
    lr1: f64,
    batch: usize,
    clips: usize,
    noise: f64,
    zipf: f64,
    max_labels: usize,
    temp: f64,
}

fn main() {
    let combos = [
        Combo { name: "S z1 ml4 t1 n.35 lr.05/.03 b8", lr0: 0.05, lr1: 0.03, batch: 8, clips: 100, noise: 0.35, zipf: 1.0, max_labels: 4, temp: 1.0 },
        Combo { name: "T z1 ml4 t1 n.35 lr.05/.02 b8", lr0: 0.05, lr1: 0.02, batch: 8, clips: 100, noise: 0.35, zipf: 1.0, max_labels: 4, temp: 1.0 },
        Combo { name: "U z1 ml4 t2 n.3 lr.05/.03 b8", lr0: 0.05, lr1: 0.03, batch: 8, clips: 100, noise: 0.3, zipf: 1.0, max_labels: 4, temp: 2.0 },
        Combo { name: "V z1 ml5 t1 n.3 lr.05/.03 b8", lr0: 0.05, lr1: 0.03, batch: 8, clips: 100, noise: 0.3, zipf: 1.0, max_labels: 5, temp: 1.0 },
    ];
    for combo in &combos {
        println!("==== {} ====", combo.name);
        let t0 = std::time::Instant::now();
        for seed in [11u64, 22, 33] {
            let synth = SynthConfig {
                n_classes: 10,
                feature_dim: 16,
                clips_per_class: combo.clips,
                zipf_exponent: combo.zipf,
                max_labels: combo.max_labels,
                noise_sigma: combo.noise,
                cooccur_temperature: combo.temp,
                seed,
            };
            let data = gen_synthetic(&synth).unwrap();
            let plan = PhasePlan::random(10, 4, 2, 3, seed).unwrap();
            let cfg = TrainConfig {
                epochs: 30,
                batch_size: combo.batch,
                lr_initial: combo.lr0,
                lr_incremental: combo.lr1,
                seed,
                model: ModelConfig::default(),
                ..TrainConfig::default()
            };
            let base = train_base_phase(&data, &plan, &cfg).unwrap();
            print!("seed {seed} p0F1 {:.3} | ", base.1.macro_f1);
            let base_n = plan.phase_classes(0).len();
            let mut norm_line = String::new();
            for strat in [Strategy::Ft, Strategy::Fe, Strategy::IndlOnly, Strategy::Iod, Strategy::Ifd, Strategy::Iodfd] {
                let r = run_cil_with_base(&data, &plan, strat, &cfg, Some(base.clone())).unwrap();
                let fr = r.summary.avg_fr.unwrap_or(f64::NAN);
                print!("{} F1 {:.3} Fr {:5.1} | ", strat.name(), r.summary.avg_macro_f1, fr);
                if matches!(strat, Strategy::Ifd | Strategy::Iodfd) {
                    let wn = &r.phases.last().unwrap().weight_norms;
                    let b: f64 = wn[..base_n].iter().sum::<f64>() / base_n as f64;
                    let i: f64 = wn[base_n..].iter().sum::<f64>() / (wn.len() - base_n) as f64;
                    norm_line.push_str(&format!("{} base {:.2} inc {:.2} ratio {:.2}  ", strat.name(), b, i, i / b));
                }
            }
            println!();
            println!("        norms: {norm_line}");
        }
        println!("  ({:.1}s)", t0.elapsed().as_secs_f64());
    }
}
