use moder::bench::*;
use moder::encoder::{ReferenceEncoder, TemplateLibrary};
use std::time::Instant;

fn main() {
    let args: Vec<String> = std::env::args().collect();
    let seeds: Vec<u64> = if args.len() > 1 {
        args[1].split(',').map(|s| s.parse().unwrap()).collect()
    } else {
        vec![1992, 1996, 1997]
    };
    let cfg_base = PipelineConfig::default();
    let encoder = ReferenceEncoder::new(cfg_base.encoder.clone()).unwrap();
    let templates = TemplateLibrary::builtin();
    for seed in seeds {
        let t0 = Instant::now();
        let mut cfg = cfg_base.clone();
        cfg.master_seed = seed;
        let world = generate_world(&WorldConfig { seed, ..WorldConfig::default() }, &encoder).unwrap();
        let stream = build_stream(&world, &StreamConfig::default(), seed).unwrap();
        let out = run_pipeline(&world, &stream, &cfg, &templates).unwrap();
        let r = &out.report;
        println!(
            "seed {seed}: faa {:.4} (zs {:.4}, diff {:+.4})  ci_t {:.4} (zs {:.4}, diff {:+.4})  [{:.1}s]",
            r.faa,
            r.zero_shot.faa,
            r.faa - r.zero_shot.faa,
            r.ci_transfer.unwrap(),
            r.zero_shot.ci_transfer.unwrap(),
            r.ci_transfer.unwrap() - r.zero_shot.ci_transfer.unwrap(),
            t0.elapsed().as_secs_f64()
        );
    }
}
