use moder::bench::*;
use moder::encoder::{ReferenceEncoder, TemplateLibrary};
use moder::ids::TaskId;
use moder::numerics::{l2_normalize, Tensor1D};
use moder::replay::*;
use std::time::Instant;

fn main() {
    let cfg = PipelineConfig::default();
    let encoder = ReferenceEncoder::new(cfg.encoder.clone()).unwrap();
    let seed = 1992u64;
    let world = generate_world(&WorldConfig { seed, ..WorldConfig::default() }, &encoder).unwrap();
    let stream = build_stream(&world, &StreamConfig::default(), seed).unwrap();
    let split = sample_split(&world, &stream, 42).unwrap();

    // Train one generator on task 0 and measure sample fidelity per class.
    let schedule = NoiseSchedule::linear(100, 1e-4, 2e-2).unwrap();
    for (label, gen_cfg) in [
        ("default 5x96@700", cfg.replay.generator.clone()),
        ("wide 8x256@1500", GeneratorConfig { layers: 8, hidden: 256, iters: 1500, ..GeneratorConfig::default() }),
    ] {
        let t0 = Instant::now();
        let out = train_generator(&split.train[0], &schedule, 7, &gen_cfg, TaskId(0)).unwrap();
        print!("{label}: final_loss {:.4} [{:.1}s] |", out.generator.final_loss().unwrap(), t0.elapsed().as_secs_f64());
        for &class in stream.tasks[0].classes.iter() {
            let samples = out.generator.sample(class, 200, 9).unwrap();
            let d = encoder.dim();
            let mut acc = vec![0.0; d];
            for s in &samples {
                for (a, &v) in acc.iter_mut().zip(s.as_slice()) { *a += v; }
            }
            let mean = l2_normalize(&Tensor1D::from_vec(acc).unwrap()).unwrap();
            let cos = mean.cosine(world.mean(class).unwrap()).unwrap();
            // Also: how close are real train features to the mean?
            print!(" c{}: cos(gen_mean,true)={:.3}", class.0, cos);
        }
        println!();
    }

    // Zero-shot view: how close are text protos to visual means?
    let mut avg_cos = 0.0;
    for c in world.classes() {
        let p = moder::encoder::ClassPrompt::canonical(c.id, c.name.clone());
        let z = encoder.zero_shot(&p).unwrap();
        avg_cos += z.cosine(world.mean(c.id).unwrap()).unwrap();
    }
    println!("mean cos(text_proto, visual_mean) = {:.3}", avg_cos / world.len() as f64);
}
