mod common;

use common::*;
use mmgen_fewshot::*;

fn task() -> EvalTask {
    let colors = ["red", "blue", "green"];
    let shapes = ["square", "circle"];
    let pool = (0..12)
        .map(|i| item(100 + i, shapes[i as usize % 2], colors[i as usize % 3]))
        .collect();
    let test = (0..5)
        .map(|i| item(200 + i, shapes[i as usize % 2], colors[(i as usize + 1) % 3]))
        .collect();
    EvalTask { pool, test }
}

#[test]
fn report_has_one_record_per_item_and_shot() {
    let v = vocab();
    let model = tiny_model(1, v.len(), 512);
    let shots = [0, 2, 4];
    let report = run_eval(&model, &v, &task(), &shots, &EvalOptions::default()).unwrap();
    assert_eq!(report.records.len(), 15);
    assert_eq!(report.summary.iter().map(|s| s.k).collect::<Vec<_>>(), shots);
    for s in &report.summary {
        let hits = report.records.iter().filter(|r| r.k == s.k).map(|r| r.score as usize).sum::<usize>();
        assert_eq!(hits, s.correct);
        assert_eq!(s.total, 5);
    }
    let text = report.to_string();
    assert_eq!(text.lines().count(), 15 + 3);
    assert!(text.lines().next().unwrap().starts_with("item=0\tk=0\tprediction="));
    assert!(text.lines().last().unwrap().starts_with("# k=4 accuracy="));
    // deterministic
    assert_eq!(run_eval(&model, &v, &task(), &shots, &EvalOptions::default()).unwrap(), report);
}

#[test]
fn accuracy_ignores_pool_order() {
    let v = vocab();
    let model = tiny_model(2, v.len(), 512);
    let t = task();
    let mut shuffled = t.clone();
    shuffled.pool.reverse();
    shuffled.pool.swap(0, 5);
    let opts = EvalOptions::default();
    let a = run_eval(&model, &v, &t, &[2, 4], &opts).unwrap();
    let b = run_eval(&model, &v, &shuffled, &[2, 4], &opts).unwrap();
    assert_eq!(a.summary, b.summary);
    let preds = |r: &EvalReport| r.records.iter().map(|x| x.prediction.clone()).collect::<Vec<_>>();
    assert_eq!(preds(&a), preds(&b));
}

#[test]
fn overlapping_pool_and_test_are_rejected() {
    let v = vocab();
    let model = tiny_model(1, v.len(), 512);
    let mut t = task();
    t.test.push(t.pool[3].clone());
    assert!(matches!(
        run_eval(&model, &v, &t, &[0], &EvalOptions::default()),
        Err(FewShotError::Overlap(5))
    ));
}

#[test]
fn prompts_beyond_the_context_signal_fewer_shots() {
    let v = vocab();
    let model = tiny_model(1, v.len(), 64);
    assert!(matches!(
        run_eval(&model, &v, &task(), &[8], &EvalOptions::default()),
        Err(FewShotError::PromptTooLong { .. })
    ));
}
