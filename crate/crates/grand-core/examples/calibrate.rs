// scratch calibration runs; not part of the test suite
use grand_core::data::synth_sbm;
use grand_core::model::{GrandModel, ModelDims, Variant};
use grand_core::solver::{SchemeConfig, SchemeKind};
use grand_core::train::{train, TrainConfig};

fn main() {
    let args: Vec<String> = std::env::args().collect();
    let mode = args.get(1).map(String::as_str).unwrap_or("sbm");
    match mode {
        "sbm" => sbm_run(&args[2..]),
        "depth" => depth_run(&args[2..]),
        "t32" => t32_run(&args[2..]),
        other => eprintln!("unknown mode {other}"),
    }
}

fn parsef(args: &[String], i: usize, default: f64) -> f64 {
    args.get(i).and_then(|s| s.parse().ok()).unwrap_or(default)
}

fn sbm_run(args: &[String]) {
    let p_in = parsef(args, 0, 0.1);
    let p_out = parsef(args, 1, 0.01);
    let noise = parsef(args, 2, 0.5);
    let n = parsef(args, 3, 200.0) as usize;
    let t_end = parsef(args, 4, 4.0);
    let epochs = parsef(args, 5, 200.0) as usize;
    let lr = parsef(args, 6, 0.01);
    let hidden = parsef(args, 7, 16.0) as usize;
    let variant = match args.get(8).map(String::as_str) {
        Some("nl") => Variant::GrandNl,
        Some("uniform") => Variant::Uniform,
        _ => Variant::GrandL,
    };

    let data = synth_sbm(2, n, p_in, p_out, noise, 7).unwrap();
    let dims = ModelDims { d_in: 2, hidden, classes: 2, d_k: 4, heads: 1 };
    let scheme = SchemeConfig::with(SchemeKind::Rk4, 1.0, t_end);
    let model = GrandModel::init(dims, variant, scheme, None, 1).unwrap();
    let cfg = TrainConfig { epochs, lr, ..Default::default() };
    let t0 = std::time::Instant::now();
    let out = train(model, &data, &cfg).unwrap();
    println!(
        "variant={variant:?} T={t_end} p=({p_in},{p_out}) noise={noise} -> best_val={:.3} test={:.3} best_epoch={} ({:.2?})",
        out.best_val_acc, out.test_acc, out.best_epoch, t0.elapsed()
    );
}

fn t32_run(args: &[String]) {
    // scan: does gated diffusion survive T=32 where uniform collapses?
    let p_in = parsef(args, 0, 0.05);
    let p_out = parsef(args, 1, 0.015);
    let noise = parsef(args, 2, 0.1);
    let n = parsef(args, 3, 400.0) as usize;
    let epochs = parsef(args, 4, 300.0) as usize;
    let hidden = parsef(args, 5, 4.0) as usize;
    let dk = parsef(args, 6, 1.0) as usize;
    let lr = parsef(args, 7, 0.02);
    let seed = parsef(args, 8, 1.0) as u64;

    let data = synth_sbm(2, n, p_in, p_out, noise, 7).unwrap();
    let dims = ModelDims { d_in: 2, hidden, classes: 2, d_k: dk, heads: 1 };
    for (variant, t_end) in [
        (Variant::GrandNl, 2.0),
        (Variant::GrandNl, 32.0),
        (Variant::Uniform, 2.0),
        (Variant::Uniform, 32.0),
    ] {
        let scheme = SchemeConfig::with(SchemeKind::Rk4, 1.0, t_end);
        let model = GrandModel::init(dims, variant, scheme, None, seed).unwrap();
        let cfg = TrainConfig { epochs, lr, ..Default::default() };
        let out = train(model, &data, &cfg).unwrap();
        println!(
            "p=({p_in},{p_out}) noise={noise} h={hidden} dk={dk} seed={seed} {variant:?} T={t_end}: test={:.3}",
            out.test_acc
        );
    }
}

fn depth_run(args: &[String]) {
    let p_in = parsef(args, 0, 0.05);
    let p_out = parsef(args, 1, 0.02);
    let noise = parsef(args, 2, 0.5);
    let n = parsef(args, 3, 400.0) as usize;
    let epochs = parsef(args, 4, 150.0) as usize;
    let hidden = parsef(args, 5, 16.0) as usize;

    let dk = parsef(args, 6, 1.0) as usize;
    let lr = parsef(args, 7, 0.02);
    let seed = parsef(args, 8, 3.0) as u64;
    let data = synth_sbm(2, n, p_in, p_out, noise, 7).unwrap();
    let dims = ModelDims { d_in: 2, hidden, classes: 2, d_k: dk, heads: 1 };
    for variant in [Variant::GrandNl, Variant::Uniform] {
        print!("{variant:?}:");
        for t_end in [2.0, 4.0, 8.0, 16.0, 32.0] {
            let scheme = SchemeConfig::with(SchemeKind::Rk4, 1.0, t_end);
            let model = GrandModel::init(dims, variant, scheme, None, seed).unwrap();
            let cfg = TrainConfig { epochs, lr, ..Default::default() };
            let out = train(model, &data, &cfg).unwrap();
            print!(" T={t_end}:{:.3}", out.test_acc);
        }
        println!();
    }
}
