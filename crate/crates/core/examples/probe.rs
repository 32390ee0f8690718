// Scratch probe for benchmark tuning (not part of the public surface).

use lorasculpt::trainer::*;
use lorasculpt::Baseline;

fn median(mut v: Vec<f64>) -> f64 {
    v.sort_by(|a, b| a.partial_cmp(b).unwrap());
    v[v.len() / 2]
}

fn main() {
    let seeds: Vec<u64> = (42..47).collect();
    let mut sculpt_drops = vec![];
    let mut lora_drops = vec![];
    let mut sculpt_targets = vec![];
    let mut lora_targets = vec![];
    let mut posthoc_drops = vec![];

    for &seed in &seeds {
        let mut cfg = TrainConfig::default();
        cfg.seed = seed;
        let task = TaskSpec::generate(&cfg);
        let base = pretrain_base(&cfg, &task).unwrap();
        let pre = evaluate(&base, &task);

        let (sculpt, _) = train(&base, &task, &cfg).unwrap();
        let post_s = evaluate(&sculpt, &task);

        let mut lcfg = cfg.clone();
        lcfg.baseline = Baseline::Lora;
        let (lora, _) = train(&base, &task, &lcfg).unwrap();
        let post_l = evaluate(&lora, &task);

        let pruned = posthoc_prune(&lora, cfg.retained_density).unwrap();
        let post_p = evaluate(&pruned, &task);

        println!(
            "seed {seed}: pre S={:.4} T={:.4} | sculpt S={:.4} T={:.4} | lora S={:.4} T={:.4} | posthoc S={:.4} T={:.4}",
            pre.source, pre.target, post_s.source, post_s.target, post_l.source, post_l.target,
            post_p.source, post_p.target
        );
        for row in &post_s.layer_sparsity {
            print!("   layer {} actual {:.4} expected {:.4} |", row.layer, row.actual, row.expected);
        }
        println!();
        sculpt_drops.push(pre.source - post_s.source);
        lora_drops.push(pre.source - post_l.source);
        posthoc_drops.push(pre.source - post_p.source);
        sculpt_targets.push(post_s.target);
        lora_targets.push(post_l.target);
    }
    let md_s = median(sculpt_drops);
    let md_l = median(lora_drops);
    let md_p = median(posthoc_drops);
    let mt_s = median(sculpt_targets);
    let mt_l = median(lora_targets);
    println!("median drop: sculpt {md_s:.4} lora {md_l:.4} posthoc {md_p:.4}");
    println!("median target: sculpt {mt_s:.4} lora {mt_l:.4} ratio {:.4}", mt_s / mt_l);
    println!(
        "criterion7: drop_ok={} target_ok={}  criterion8: posthoc_ok={}",
        md_s < md_l,
        mt_s >= 0.9 * mt_l,
        md_p < md_l
    );
}
