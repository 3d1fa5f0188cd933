use pfdcount_core::experiment::{evaluate, train_pipeline, PipelineConfig, Profile};
use pfdcount_core::neural::{fit_dataset, init_net, Activation, Dataset, TrainConfig};
use pfdcount_core::runtime::Method;
use pfdcount_core::training::train_student_offline;

fn tiny(types: usize, l: usize) -> PipelineConfig {
    let mut c = PipelineConfig::for_profile(Profile::Desk, types, l, 0.1, 11);
    c.teacher_frames = 120;
    c.student_frames = 120;
    c.teacher.max_epochs = 3;
    c.student.max_epochs = 3;
    c
}

#[test]
fn teacher_term_adds_no_student_gradient() {
    let inputs: Vec<Vec<f64>> = (0..20).map(|i| vec![i as f64 / 20.0, 1.0 - i as f64 / 40.0]).collect();
    let targets: Vec<Vec<f64>> = (0..20).map(|i| vec![(i % 3) as f64 / 3.0]).collect();
    let teach_a: Vec<Vec<f64>> = (0..20).map(|i| vec![i as f64 / 7.0]).collect();
    let teach_b: Vec<Vec<f64>> = (0..20).map(|_| vec![-4.0]).collect();
    let config = TrainConfig {
        max_epochs: 4,
        batch_size: 5,
        mixing_alpha: 0.3,
        ..TrainConfig::default()
    };
    let acts = [Activation::Relu, Activation::Linear];
    let mut nets = Vec::new();
    for teacher in [&teach_a, &teach_b] {
        let mut net = init_net(&[2, 4, 1], &acts, 5).unwrap();
        let data = Dataset::new(&inputs, &targets, Some(teacher)).unwrap();
        fit_dataset(&mut net, &data, &config).unwrap();
        nets.push(net);
    }
    assert_eq!(nets[0], nets[1]);
}

#[test]
fn student_training_leaves_teacher_untouched() {
    let c = tiny(1, 20);
    let models = train_pipeline(&c).unwrap();
    let before = models.teacher.fingerprint();
    let data = c.student_dataset(&models.teacher).unwrap();
    train_student_offline(&models.teacher, &data, &c.student).unwrap();
    assert_eq!(models.teacher.fingerprint(), before);
}

#[test]
fn pipeline_is_reproducible_end_to_end() {
    for types in [1, 3] {
        let c = tiny(types, 40);
        let a = train_pipeline(&c).unwrap();
        let b = train_pipeline(&c).unwrap();
        assert_eq!(a.student, b.student);
        let ra = evaluate(&c, Some(&a.student), &Method::ALL, 2, 30, 4).unwrap();
        let rb = evaluate(&c, Some(&b.student), &Method::ALL, 2, 30, 4).unwrap();
        assert_eq!(ra, rb);
        assert_eq!(ra.len(), 3);
        assert!(ra.iter().flatten().all(|m| m.mean_normalized_mse.is_finite()));
    }
}

#[test]
fn student_features_carry_own_estimates_and_teacher_features_truth() {
    let c = tiny(3, 12);
    let models = train_pipeline(&c).unwrap();
    let data = c.student_dataset(&models.teacher).unwrap();
    let setting = c.setting().unwrap();
    let n_max = setting.n_max();
    for r in &data.records {
        let s = &r.student_features.values;
        let t = &r.teacher_features.values;
        let s_tail = &s[s.len() - 3..];
        let t_tail = &t[t.len() - 3..];
        for b in 0..3 {
            assert_eq!(s_tail[b], r.aux.prev_estimates[b] / n_max);
            assert_eq!(t_tail[b], r.aux.prev_truths[b] as f64 / n_max);
        }
    }
}
