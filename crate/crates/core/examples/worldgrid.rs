use moder::bench::*;
use moder::encoder::{ReferenceEncoder, TemplateLibrary};
use std::time::Instant;

fn main() {
    let base = PipelineConfig::default();
    let encoder = ReferenceEncoder::new(base.encoder.clone()).unwrap();
    let templates = TemplateLibrary::builtin();
    let seed = 1992u64;
    for (gamma, delta, sigma) in [
        (0.6, 0.15, 0.08),
        (0.9, 0.15, 0.08),
        (0.9, 0.30, 0.12),
        (1.2, 0.20, 0.12),
        (0.9, 0.15, 0.20),
    ] {
        let t0 = Instant::now();
        let wcfg = WorldConfig { gamma, delta, sigma, seed, ..WorldConfig::default() };
        let world = generate_world(&wcfg, &encoder).unwrap();
        let stream = build_stream(&world, &StreamConfig::default(), seed).unwrap();
        let mut cfg = base.clone();
        cfg.master_seed = seed;
        let out = run_pipeline(&world, &stream, &cfg, &templates).unwrap();
        let r = &out.report;
        println!(
            "g={gamma} d={delta} s={sigma}: faa {:.3} (zs {:.3}, {:+.3})  ci_t {:.3} (zs {:.3}, {:+.3}) [{:.0}s]",
            r.faa, r.zero_shot.faa, r.faa - r.zero_shot.faa,
            r.ci_transfer.unwrap(), r.zero_shot.ci_transfer.unwrap(),
            r.ci_transfer.unwrap() - r.zero_shot.ci_transfer.unwrap(),
            t0.elapsed().as_secs_f64()
        );
    }
}
