use dffw::checkpoint::{Checkpoint, Provenance};
use dffw::data::{self, io as dio, BallSimConfig, FoldPolicy, Trajectory};
use dffw::exec::{self, ExecMode};
use dffw::experiment::{self, EvalConfig, Fitted, ModelSpec};
use dffw::inference::{self, FrameWindow, HistoryWindow};
use dffw::metrics::Task;
use dffw::model::{LayerDims, ModelKind};
use dffw::training::TrainConfig;
use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

const HISTORY: usize = 6;

fn small_data() -> Vec<Trajectory> {
    let cfg = BallSimConfig { trajectories_per_class: 2, frames: 60, ..BallSimConfig::default() };
    data::generate_dataset(&cfg, ExecMode::Sequential).unwrap()
}

fn small_spec(kind: ModelKind) -> ModelSpec {
    ModelSpec { kind, n_h: 4, n_f: 6, ..ModelSpec::standard(kind) }
}

fn quick_train() -> TrainConfig {
    TrainConfig { epochs: 2, seed: 3, ..TrainConfig::default() }
}

#[test]
fn dataset_round_trips_through_disk() {
    let trajs = small_data();
    let dir = tempfile::tempdir().unwrap();
    dio::write_dataset(dir.path(), &trajs, 42).unwrap();
    assert_eq!(dio::read_dataset(dir.path()).unwrap(), trajs);
    assert_eq!(dio::manifest_seed(dir.path()).unwrap(), 42);
}

#[test]
fn trained_model_survives_checkpoint() {
    let trajs = small_data();
    let train: Vec<Trajectory> = trajs.iter().step_by(2).cloned().collect();
    let test: Vec<Trajectory> = trajs.iter().skip(1).step_by(2).cloned().collect();
    let (fitted, log) = experiment::fit(&small_spec(ModelKind::Dffw), &train, HISTORY, 4, &quick_train()).unwrap();
    assert_eq!(log.len(), 2);

    let ck = Checkpoint {
        params: fitted.params.clone(),
        norm: fitted.norm.clone(),
        train: quick_train(),
        provenance: Provenance { init_seed: 7, init_std: 0.3, data_seed: 42, history_len: HISTORY },
    };
    let back = Checkpoint::read(ck.to_bytes().unwrap().as_slice()).unwrap();
    assert_eq!(back, ck);

    let eval = EvalConfig { history_len: HISTORY, horizons: vec![1, 4], ..EvalConfig::default() };
    let restored = Fitted { params: back.params, norm: back.norm };
    let a = experiment::evaluate_fitted(&fitted, &test, &eval).unwrap();
    let b = experiment::evaluate_fitted(&restored, &test, &eval).unwrap();
    assert_eq!(a, b);
    let tasks: Vec<Task> = a.iter().map(|r| r.task).collect();
    assert_eq!(tasks, vec![Task::Classification, Task::PresentStep, Task::Multistep(1), Task::Multistep(4)]);
}

#[test]
fn cross_validation_is_mode_independent() {
    let trajs = small_data();
    let eval = EvalConfig { history_len: HISTORY, horizons: vec![2], ..EvalConfig::default() };
    let run = |mode| {
        experiment::cross_validate(&small_spec(ModelKind::Ffw), &trajs, FoldPolicy::OnePerClass, &quick_train(), &eval, None, mode)
            .unwrap()
    };
    let seq = run(ExecMode::Sequential);
    assert_eq!(seq.len(), 2);
    assert_eq!(seq, run(ExecMode::Parallel));
    let summary = experiment::summarize_folds(&seq).unwrap();
    assert!(summary.iter().all(|r| r.n > 0));
}

#[test]
fn rollout_keeps_window_length() {
    let dims = LayerDims::dffw(5, 3, 2 * HISTORY, 4, 3, 3);
    let params = dffw::model::init_params(dims, 1, 0.1).unwrap();
    let hist = ndarray::Array1::linspace(-1.0, 1.0, 2 * HISTORY);
    let mut window = FrameWindow::from_flat(&hist, 2);
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let out = inference::predict_multistep(&params, &mut window, None, 8, &[3, 4], 3, &mut rng).unwrap();
    assert_eq!(out.len(), 8);
    assert_eq!(window.len(), HISTORY);
    // The newest frame in the window is the last prediction's 2D part.
    let f = window.features();
    assert_eq!(&f.as_slice().unwrap()[2 * HISTORY - 2..], &[out[7][3], out[7][4]]);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(32))]

    #[test]
    fn exec_map_preserves_order(xs in prop::collection::vec(-1e6f64..1e6, 0..64)) {
        let seq = exec::map(ExecMode::Sequential, &xs, |x| x * 2.0);
        let par = exec::map(ExecMode::Parallel, &xs, |x| x * 2.0);
        prop_assert_eq!(&seq, &par);
        prop_assert_eq!(seq, xs.iter().map(|x| x * 2.0).collect::<Vec<_>>());
    }

    #[test]
    fn folds_partition_trajectories(classes in 1usize..5, per_class in 2usize..7) {
        let trajs: Vec<Trajectory> = (0..classes * per_class)
            .map(|id| Trajectory { id, class_id: id / per_class, frames: vec![] })
            .collect();
        let folds = data::kfold_by_trajectory(&trajs, FoldPolicy::OnePerClass).unwrap();
        prop_assert_eq!(folds.len(), per_class);
        let mut tested = vec![0usize; trajs.len()];
        for f in &folds {
            prop_assert_eq!(f.train.len(), classes);
            prop_assert_eq!(f.train.len() + f.test.len(), trajs.len());
            for &i in &f.test {
                prop_assert!(!f.train.contains(&i));
                tested[i] += 1;
            }
        }
        prop_assert!(tested.iter().all(|&n| n == per_class - 1));
    }

    #[test]
    fn samples_window_history(len in 3usize..30, history in 1usize..3) {
        let cfg = BallSimConfig { frames: len, ..BallSimConfig::default() };
        let mut rng = data::trajectory_rng(1, 0);
        let traj = data::simulate_trajectory(&cfg, 0, &mut rng).unwrap();
        let samples = data::trajectory_samples(&traj, history, 4).unwrap();
        prop_assert_eq!(samples.len(), traj.len() - history);
        for s in &samples {
            let oldest = &traj.frames[s.frame - history];
            prop_assert_eq!(s.history[0], oldest.uv[0]);
            prop_assert_eq!(s.history[1], oldest.uv[1]);
            prop_assert_eq!(s.present[3], traj.frames[s.frame].uv[0]);
        }
    }
}
