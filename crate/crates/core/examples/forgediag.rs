use moder::bench::*;
use moder::encoder::{ClassPrompt, ReferenceEncoder, TemplateLibrary};
use moder::experts::*;
use moder::hub::*;
use moder::ids::TaskId;
use moder::replay::*;
use std::sync::Arc;

fn main() {
    let base = PipelineConfig::default();
    let encoder = Arc::new(ReferenceEncoder::new(base.encoder.clone()).unwrap());
    let seed = 1992u64;
    let wcfg = WorldConfig { gamma: 0.9, delta: 0.3, sigma: 0.12, seed, ..WorldConfig::default() };
    let world = generate_world(&wcfg, &encoder).unwrap();
    let stream = build_stream(&world, &StreamConfig::default(), seed).unwrap();
    let split = sample_split(&world, &stream, 42).unwrap();
    let templates = TemplateLibrary::builtin();

    // Train through 3 tasks manually (12 seen classes).
    let schedule = NoiseSchedule::linear(100, 1e-4, 2e-2).unwrap();
    let mut gens = Vec::new();
    let mut experts = ExpertSet::new(encoder.clone(), base.adapter.variant, base.adapter.rank, 99).unwrap();
    let mut hub = FoundationalHub::new(&encoder, base.adapter.variant, base.adapter.rank, 99).unwrap();
    for t in 0..3 {
        let gt = train_generator(&split.train[t], &schedule, 7 + t as u64, &base.replay.generator, TaskId(t as u32)).unwrap();
        gens.push(gt.generator);
        let dsyn = build_synthetic_dataset(&gens, 150, 64, 11 + t as u64).unwrap();
        for &c in &stream.tasks[t].classes {
            experts.ensure_expert(c, world.name(c).unwrap(), TaskId(t as u32));
        }
        let tc = TrainConfig { seed: 5 + t as u64, ..base.experts.clone() };
        train_task_experts(&mut experts, &dsyn, &tc, TaskId(t as u32), &templates).unwrap();
        for (&c, e) in experts.entries() {
            if hub.contains(c) { hub.update_adapter(c, e.adapter.clone()).unwrap(); }
            else { hub.insert(c, &e.name, e.adapter.clone(), &encoder, e.created_task).unwrap(); }
        }
    }

    let seen_fams: Vec<usize> = stream.seen_classes(2).iter().map(|c| world.class(*c).unwrap().family).collect();
    println!("seen families: {seen_fams:?}");

    for (k, temp, alpha) in [(5, 1.0, 0.5), (3, 1.0, 0.5), (1, 1.0, 0.5), (3, 0.05, 0.5), (1, 1.0, 0.3), (3, 0.05, 0.3), (3, 0.02, 0.5)] {
        let cfg = ForgeConfig { k, temperature: temp, alpha, ..ForgeConfig::default() };
        let mut sum_forged = 0.0;
        let mut sum_zs = 0.0;
        let mut fam_hits = 0.0;
        let mut n = 0.0;
        for u in stream.unseen_classes(2) {
            let name = world.name(u).unwrap().to_string();
            let fam = world.class(u).unwrap().family;
            let (proto, report) = hub.forge(&encoder, &name, &cfg).unwrap();
            let truem = world.mean(u).unwrap();
            let zs = encoder.zero_shot(&ClassPrompt::canonical(u, name.clone())).unwrap();
            sum_forged += proto.cosine(truem).unwrap();
            sum_zs += zs.cosine(truem).unwrap();
            // weight mass on same-family contributors
            for c in &report.contributors {
                if world.class(moder::ids::ClassId(c.class_id)).unwrap().family == fam {
                    fam_hits += c.weight;
                }
            }
            n += 1.0;
        }
        println!(
            "K={k} T={temp} a={alpha}: cos(forged,true) {:.3} vs cos(zs,true) {:.3}  same-family weight {:.2}",
            sum_forged / n, sum_zs / n, fam_hits / n
        );
    }
}
