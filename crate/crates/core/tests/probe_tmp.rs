//! Throwaway diagnostics against a scratch run dir. Ignored by default.

use semcot::config::Config;
use semcot::run::{RunDir, RunLogger};
use semcot::training;

fn cos(a: &[f64], b: &[f64]) -> f64 {
    let dot: f64 = a.iter().zip(b).map(|(x, y)| x * y).sum();
    let na: f64 = a.iter().map(|x| x * x).sum::<f64>().sqrt();
    let nb: f64 = b.iter().map(|x| x * x).sum::<f64>().sqrt();
    dot / (na * nb)
}

#[test]
#[ignore]
fn probe_trained_run() {
    let dir = std::path::PathBuf::from("/tmp/c5_seed0");
    let cfg = Config::load(Some(&dir.join("config.toml")), &[]).unwrap();
    let run = RunDir::create(&dir).unwrap();
    let mut logger = RunLogger::in_memory();
    let arts = training::run_pipeline(&cfg, Some(&run), &mut logger).unwrap();

    let ex = &arts.splits.test[0];
    println!("query: {}", ex.query);
    let q_small = arts.tok_small.encode(&ex.query);
    let z = arts.generator.implicit_vectors(&q_small, cfg.generator.k_train);
    println!("z rows: {}", z.nrows());
    for i in 0..z.nrows() {
        let ni: f64 = z.row(i).iter().map(|x| x * x).sum::<f64>().sqrt();
        print!("|z{i}| = {ni:.3}  ");
    }
    println!();
    for i in 0..z.nrows() {
        for j in (i + 1)..z.nrows() {
            print!(
                "cos(z{i},z{j})={:.3} ",
                cos(z.row(i).as_slice().unwrap(), z.row(j).as_slice().unwrap())
            );
        }
    }
    println!();
    let emb = arts.target.params.get("tok_emb");
    let mean_tok_norm: f64 = (0..emb.nrows())
        .map(|r| emb.row(r).iter().map(|x| x * x).sum::<f64>().sqrt())
        .sum::<f64>()
        / emb.nrows() as f64;
    println!("mean token-embedding norm: {mean_tok_norm:.4}");

    for k in 1..=cfg.generator.k_train {
        let mut correct = 0;
        let n = 60.min(arts.splits.test.len());
        for ex in arts.splits.test.iter().take(n) {
            let run = semcot::inference::implicit_infer(
                &arts.target,
                &arts.generator,
                &arts.tok,
                &arts.tok_small,
                &ex.query,
                k,
                cfg.generator.k_train,
                &cfg.inference,
            );
            let got = semcot::inference::extract_answer(&ex.domain, &run.text);
            if got.as_deref() == Some(ex.answer.trim()) {
                correct += 1;
            }
        }
        println!("k={k}: {correct}/{n}");
    }
}
