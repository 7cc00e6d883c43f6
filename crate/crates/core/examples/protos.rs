use moder::bench::*;
use moder::encoder::{ClassPrompt, ReferenceEncoder, TemplateLibrary};
use moder::hub::PrototypeTable;
use moder::ids::{ClassId, TaskId};
use moder::numerics::{l2_normalize, EmbeddingVector, Tensor1D};
use moder::replay::*;
use moder::experts::*;
use std::sync::Arc;

fn mean_of(samples: &[EmbeddingVector]) -> EmbeddingVector {
    let d = samples[0].dim();
    let mut acc = vec![0.0; d];
    for s in samples {
        for (a, &v) in acc.iter_mut().zip(s.as_slice()) { *a += v; }
    }
    l2_normalize(&Tensor1D::from_vec(acc).unwrap()).unwrap()
}

fn main() {
    let cfg = PipelineConfig::default();
    let encoder = Arc::new(ReferenceEncoder::new(cfg.encoder.clone()).unwrap());
    let seed = 1992u64;
    let world = generate_world(&WorldConfig { seed, ..WorldConfig::default() }, &encoder).unwrap();
    let stream = build_stream(&world, &StreamConfig::default(), seed).unwrap();
    let split = sample_split(&world, &stream, 42).unwrap();

    // Use task 0 only: train generator, dsyn, experts; evaluate on task 0 test.
    let schedule = NoiseSchedule::linear(100, 1e-4, 2e-2).unwrap();
    let gt = train_generator(&split.train[0], &schedule, 7, &cfg.replay.generator, TaskId(0)).unwrap();
    let dsyn = build_synthetic_dataset(std::slice::from_ref(&gt.generator), 150, 64, 11).unwrap();

    let classes: Vec<ClassId> = stream.tasks[0].classes.clone();
    let test = &split.test[0];

    let acc = |protos: Vec<(ClassId, EmbeddingVector)>| -> f64 {
        let table = PrototypeTable::from_entries(protos);
        accuracy_over(&table, test, None).unwrap()
    };

    // 1. true visual means
    let p_true: Vec<_> = classes.iter().map(|&c| (c, world.mean(c).unwrap().clone())).collect();
    println!("acc true-means:    {:.4}", acc(p_true));

    // 2. generated class means
    let p_gen: Vec<_> = classes.iter().map(|&c| {
        let s = gt.generator.sample(c, 200, 5).unwrap();
        (c, mean_of(&s))
    }).collect();
    println!("acc gen-means:     {:.4}", acc(p_gen));

    // 3. zero-shot protos
    let p_zs: Vec<_> = classes.iter().map(|&c| {
        let p = ClassPrompt::canonical(c, world.name(c).unwrap().to_string());
        (c, encoder.zero_shot(&p).unwrap())
    }).collect();
    println!("acc zero-shot:     {:.4}", acc(p_zs));

    // 4. trained expert protos for a few lr/iter settings
    for (lr, iters, aug) in [(1e-3, 500, true), (3e-4, 500, true), (1e-3, 500, false), (3e-4, 1500, true), (1e-3, 150, true)] {
        let mut experts = ExpertSet::new(encoder.clone(), cfg.adapter.variant, cfg.adapter.rank, 99).unwrap();
        for &c in &classes { experts.ensure_expert(c, world.name(c).unwrap(), TaskId(0)); }
        let tc = TrainConfig { lr, iterations: iters, template_augmentation: aug, seed: 3, ..cfg.experts.clone() };
        train_task_experts(&mut experts, &dsyn, &tc, TaskId(0), &TemplateLibrary::builtin()).unwrap();
        let p_exp: Vec<_> = classes.iter().map(|&c| {
            let e = experts.entry(c).unwrap();
            let tv = experts.space().materialize(&e.adapter).unwrap();
            let p = ClassPrompt::canonical(c, e.name.clone());
            (c, encoder.encode(&p, Some(&tv), 1.0).unwrap())
        }).collect();
        let a = acc(p_exp);
        let tracc = experts.training_accuracy(dsyn.items()).unwrap();
        println!("acc experts lr={lr:.0e} it={iters} aug={aug}: {a:.4} (train acc on dsyn {tracc:.4})");
    }
}
