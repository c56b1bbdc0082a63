use lpt_core::envs::*;
use lpt_core::envs::connect4::{self, Board};
use lpt_core::model::{ActionSpace, ActionValue, Actions};
use lpt_core::numerics::RngStream;
use lpt_core::sampler::LinearGaussianSpec;
use lpt_core::Error;

fn rng(seed: u64) -> RngStream {
    RngStream::new(seed, 0)
}

#[test]
fn make_env_knows_the_builtin_ids() {
    assert_eq!(make_env(GRIDMAZE_ID).unwrap().state_dim(), 66);
    assert_eq!(make_env(CONNECT4_ID).unwrap().action_space(), ActionSpace::Discrete { n: 7 });
    assert!(matches!(make_env(LINGAUSS_ID), Err(Error::Config(_))));
    assert!(matches!(make_env("nope"), Err(Error::Config(_))));
}

#[test]
fn maze_geometry() {
    let maze = GridMaze::default();
    assert_eq!((maze.rows(), maze.cols()), (8, 8));
    let dist = maze.distances_to(maze.goal());
    for c in maze.open_cells() {
        assert!(dist[c.0 * 8 + c.1].is_some());
        assert_eq!(maze.decode(&maze.encode(c)), Some(c));
    }
    // (0,3) is a wall, so moving right from (0,2) stays put.
    assert_eq!(maze.move_from((0, 2), 3), (0, 2));
    assert_eq!(maze.move_from((0, 0), 0), (0, 0));
    assert_eq!(maze.move_from((0, 0), 1), (1, 0));
    assert_eq!(maze.move_from((3, 4), 4), (3, 4));
    assert!(maze.decode(&[0.0; 66]).is_none());
}

#[test]
fn maze_layout_errors() {
    assert!(GridMaze::from_layout(&["..#.G"], 10).is_err_and(|e| matches!(e, Error::Config(_))));
    assert!(GridMaze::from_layout(&["...."], 10).is_err());
    assert!(GridMaze::from_layout(&["G.", "..."], 10).is_err());
    assert!(GridMaze::from_layout(&["G.."], 0).is_err());
    assert!(GridMaze::from_layout(&["G.."], 5).is_ok());
}

#[test]
fn maze_episode_rules() {
    let mut env = GridMaze::from_layout(&["..G"], 3).unwrap();
    env.set_start((0, 0)).unwrap();
    let step = env.step(&ActionValue::Discrete(3), &mut rng(0)).unwrap();
    assert!(!step.done);
    let step = env.step(&ActionValue::Discrete(3), &mut rng(0)).unwrap();
    assert!(step.done);
    assert_eq!(env.episode_return(), 1.0);
    assert!(env.step(&ActionValue::Discrete(3), &mut rng(0)).is_err());

    env.set_start((0, 0)).unwrap();
    for t in 0..3 {
        let step = env.step(&ActionValue::Discrete(4), &mut rng(0)).unwrap();
        assert_eq!(step.done, t == 2);
    }
    assert_eq!(env.episode_return(), 0.0);
    assert!(env.set_start((0, 2)).is_err());
    assert!(env.step(&ActionValue::Discrete(5), &mut rng(0)).is_err());
}

#[test]
fn maze_reset_avoids_the_goal() {
    let mut env = GridMaze::default();
    for i in 0..200 {
        let s = env.reset(&mut rng(i));
        assert_ne!(env.decode(&s), Some(env.goal()));
    }
}

#[test]
fn maze_dataset_single_trajectory_is_reproducible() {
    let maze = GridMaze::default();
    let a = gen_maze_dataset(&maze, &MazeDataConfig::new(1, 3)).unwrap();
    let b = gen_maze_dataset(&maze, &MazeDataConfig::new(1, 3)).unwrap();
    assert_eq!(a, b);
    assert_eq!(a.to_jsonl().unwrap(), b.to_jsonl().unwrap());
    assert_ne!(a, gen_maze_dataset(&maze, &MazeDataConfig::new(1, 4)).unwrap());
}

#[test]
fn maze_dataset_ranges_and_replay() {
    let maze = GridMaze::default();
    let data = gen_maze_dataset(&maze, &MazeDataConfig::new(300, 1)).unwrap();
    validate_maze_dataset(&maze, &data).unwrap();
    for e in &data.episodes {
        assert!(e.ret == 0.0 || e.ret == 1.0);
        assert!((1..=64).contains(&e.traj.len()));
    }
    assert!(gen_maze_dataset(&maze, &MazeDataConfig::new(0, 1)).is_err());
}

#[test]
fn maze_validator_rejects_tampering() {
    let maze = GridMaze::default();
    let mut data = gen_maze_dataset(&maze, &MazeDataConfig::new(50, 2)).unwrap();
    let i = data.episodes.iter().position(|e| e.traj.len() >= 3).unwrap();
    let mut bad = data.clone();
    bad.episodes[i].ret = 1.0 - bad.episodes[i].ret;
    assert!(validate_maze_dataset(&maze, &bad).is_err());
    // Swap the first action for one that leads somewhere else.
    let start = maze.decode(&data.episodes[i].traj.states[0]).unwrap();
    let next = maze.decode(&data.episodes[i].traj.states[1]).unwrap();
    let other = (0..5).find(|&k| maze.move_from(start, k) != next).unwrap();
    if let Actions::Discrete(a) = &mut data.episodes[i].traj.actions {
        a[0] = other;
    }
    assert!(validate_maze_dataset(&maze, &data).is_err());
}

#[test]
fn maze_audit_default_dataset() {
    let maze = GridMaze::default();
    let data = gen_maze_dataset(&maze, &MazeDataConfig::new(2000, 0)).unwrap();
    let audit = maze_audit(&maze, &data).unwrap();
    assert!(audit.far_starts > 0);
    assert!(audit.successes > 0);
    assert!(audit.far_success_fraction <= 0.02);
    assert!(audit.far_share_of_successes <= 0.02);
    assert!(audit.stitching_linked);
    let rw = random_walk_success_rate(&maze, 500, 0);
    assert!(rw > 0.0 && rw < 0.5);
}

fn board_from(moves: &[(usize, i8)]) -> Board {
    let mut b = [0; 42];
    for &(c, p) in moves {
        connect4::drop_piece(&mut b, c, p).unwrap();
    }
    b
}


#[test]
fn connect4_gravity_and_wins() {
    let b = board_from(&[(3, 1), (3, -1), (3, 1)]);
    assert_eq!((b[3], b[10], b[17], b[24]), (1, -1, 1, 0));
    let horiz = board_from(&[(0, 1), (1, 1), (2, 1), (3, 1)]);
    assert!(connect4::wins_at(&horiz, 0, 3));
    let vert = board_from(&[(6, -1), (6, -1), (6, -1), (6, -1)]);
    assert!(connect4::has_winner(&vert));
    let diag = board_from(&[(0, 1), (1, -1), (1, 1), (2, -1), (2, -1), (2, 1), (3, -1), (3, -1), (3, -1), (3, 1)]);
    assert!(connect4::wins_at(&diag, 3, 3));
    let three = board_from(&[(0, 1), (1, 1), (2, 1)]);
    assert!(!connect4::has_winner(&three));
    let mut full = board_from(&[(0, 1); 6]);
    assert_eq!(connect4::drop_piece(&mut full, 0, 1), None);
    assert_eq!(connect4::legal_columns(&full), vec![1, 2, 3, 4, 5, 6]);
}

#[test]
fn connect4_heuristic_wins_then_blocks() {
    let greedy = Opponent { epsilon: 0.0 };
    let win = board_from(&[(0, -1), (1, -1), (2, -1), (0, 1), (1, 1), (2, 1)]);
    // Both sides threaten column 3; the mover takes its own win.
    assert_eq!(greedy.choose(&win, -1, &mut rng(0)), 3);
    let block = board_from(&[(4, 1), (5, 1), (6, 1)]);
    for s in 0..20 {
        assert_eq!(greedy.choose(&block, -1, &mut rng(s)), 3);
    }
}

#[test]
fn connect4_forfeit_and_episode_flow() {
    let mut env = ConnectFour::new(Opponent { epsilon: 1.0 });
    let s = env.reset(&mut rng(0));
    assert_eq!(s, vec![0.0; 42]);
    let mut r = rng(1);
    let mut steps = 0;
    loop {
        let legal = connect4::legal_columns(env.board());
        let st = env.step(&ActionValue::Discrete(legal[0]), &mut r).unwrap();
        steps += 1;
        if st.done {
            break;
        }
        assert_eq!(st.state.iter().filter(|&&v| v != 0.0).count(), 2 * steps);
    }
    assert!(steps <= 21);
    assert!([-1.0, 0.0, 1.0].contains(&env.episode_return()));
    assert!(env.step(&ActionValue::Discrete(0), &mut r).is_err());

    assert!(ConnectFour::default().step(&ActionValue::Discrete(7), &mut r).is_err());
}

#[test]
fn connect4_forfeit_on_full_column() {
    let mut env = ConnectFour::new(Opponent { epsilon: 1.0 });
    let mut r = rng(3);
    for seed in 0..200 {
        env.reset(&mut r);
        let mut col_full = false;
        while !env.is_over() {
            if connect4::legal_columns(env.board()).len() < 7 {
                col_full = true;
                break;
            }
            env.step(&ActionValue::Discrete((seed + env.board().iter().filter(|&&v| v != 0).count()) % 7), &mut r).unwrap();
        }
        if col_full {
            let full = (0..7).find(|c| !connect4::legal_columns(env.board()).contains(c)).unwrap();
            let st = env.step(&ActionValue::Discrete(full), &mut r).unwrap();
            assert!(st.done);
            assert_eq!(env.episode_return(), -1.0);
            return;
        }
    }
    panic!("never reached a full column");
}

#[test]
fn connect4_dataset_is_legal_and_mixed() {
    let data = gen_connect4_dataset(5000, 0.5, 0).unwrap();
    validate_connect4_dataset(&data).unwrap();
    assert!(data.episodes.iter().all(|e| [-1.0, 0.0, 1.0].contains(&e.ret)));
    let audit = connect4_audit(&data);
    assert!(audit.win_rate > 0.2 && audit.win_rate < 0.8, "{audit:?}");
    assert_eq!(audit.wins + audit.draws + audit.losses, 5000);
    assert!(gen_connect4_dataset(0, 0.5, 0).is_err());
    assert!(gen_connect4_dataset(1, 1.5, 0).is_err());
}

#[test]
fn connect4_validator_rejects_tampering() {
    let data = gen_connect4_dataset(20, 0.5, 1).unwrap();
    let mut bad = data.clone();
    let i = bad.episodes.iter().position(|e| e.traj.len() > 2).unwrap();
    bad.episodes[i].traj.states[1][0] = 5.0;
    assert!(validate_connect4_dataset(&bad).is_err());
    let mut bad = data.clone();
    bad.episodes[i].traj.states[1] = bad.episodes[i].traj.states[0].clone();
    assert!(validate_connect4_dataset(&bad).is_err());
    let mut bad = data;
    let j = bad.episodes.iter().position(|e| e.ret != 1.0).unwrap();
    bad.episodes[j].ret = 1.0;
    assert!(validate_connect4_dataset(&bad).is_err());
}

fn scalar_spec(a: f64, sigma2: f64, b: f64) -> LinearGaussianSpec {
    LinearGaussianSpec { latent_dim: 1, action_dim: 1, w: vec![0.0], c: vec![0.0], a: vec![a], b, sigma2 }
}

#[test]
fn linear_gaussian_returns_without_signal_are_iid() {
    let spec = LinearGaussianSpec { latent_dim: 2, action_dim: 1, w: vec![0.0, 0.0], c: vec![0.3], a: vec![0.0, 0.0], b: 1.5, sigma2: 0.5 };
    let n = 4000;
    let data = gen_linear_gaussian_dataset(&spec, n, 2, 11).unwrap();
    let mean = data.returns().iter().sum::<f64>() / n as f64;
    assert!((mean - 1.5).abs() <= 3.0 * (0.5f64).sqrt() / (n as f64).sqrt());
    assert_eq!(data.header.env_id, LINGAUSS_ID);
    assert!(data.episodes.iter().all(|e| e.traj.states.iter().all(|s| s == &vec![0.0])));
}

#[test]
fn linear_gaussian_scalar_marginal_variance() {
    let (a, sigma2) = (1.3, 0.4);
    let n = 10_000;
    let data = gen_linear_gaussian_dataset(&scalar_spec(a, sigma2, 0.0), n, 1, 12).unwrap();
    let ys = data.returns();
    let mean = ys.iter().sum::<f64>() / n as f64;
    let var = ys.iter().map(|y| (y - mean).powi(2)).sum::<f64>() / (n - 1) as f64;
    let expected = a * a + sigma2;
    assert!((var - expected).abs() / expected < 0.05, "{var} vs {expected}");
}

#[test]
fn linear_gaussian_files_are_byte_identical() {
    let dir = tempfile::tempdir().unwrap();
    let spec = scalar_spec(0.7, 0.25, 0.1);
    let (p1, p2) = (dir.path().join("a.jsonl"), dir.path().join("b.jsonl"));
    gen_linear_gaussian_dataset(&spec, 25, 3, 4).unwrap().save(&p1).unwrap();
    gen_linear_gaussian_dataset(&spec, 25, 3, 4).unwrap().save(&p2).unwrap();
    assert_eq!(std::fs::read(&p1).unwrap(), std::fs::read(&p2).unwrap());
}

#[test]
fn dataset_round_trip_is_exact() {
    let dir = tempfile::tempdir().unwrap();
    let maze = GridMaze::default();
    let sets = [
        gen_maze_dataset(&maze, &MazeDataConfig::new(40, 5)).unwrap(),
        gen_connect4_dataset(30, 0.5, 5).unwrap(),
        gen_linear_gaussian_dataset(&scalar_spec(0.9, 0.3, -0.2), 30, 4, 5).unwrap(),
    ];
    for (i, data) in sets.iter().enumerate() {
        let path = dir.path().join(format!("{i}.jsonl"));
        data.save(&path).unwrap();
        assert_eq!(&OfflineDataset::load(&path).unwrap(), data);
    }
}

#[test]
fn golden_file_parses() {
    let path = std::path::Path::new(env!("CARGO_MANIFEST_DIR")).join("tests/data/golden_dataset.jsonl");
    let data = OfflineDataset::load(&path).unwrap();
    assert_eq!(data.header.env_id, LINGAUSS_ID);
    assert_eq!(data.header.action_space, ActionSpace::Continuous { dim: 1 });
    assert_eq!(data.header.seed, 7);
    assert_eq!(data.len(), 2);
    assert_eq!(data.episodes[0].traj.states, vec![vec![0.0], vec![0.0]]);
    assert_eq!(data.episodes[0].traj.actions, Actions::Continuous(vec![vec![0.5], vec![-1.25]]));
    assert_eq!(data.episodes[1].ret, 3.0);
    assert_eq!(data.stats().return_mean, 2.0);
    assert_eq!(data.stats().return_std, 1.0);
    assert_eq!(data.max_return(), 3.0);
    let ex = data.training_examples().unwrap();
    assert_eq!((ex[0].y, ex[1].y), (-1.0, 1.0));
}

#[test]
fn truncated_file_names_the_line() {
    let data = gen_linear_gaussian_dataset(&scalar_spec(0.5, 0.5, 0.0), 5, 2, 1).unwrap();
    let text = data.to_jsonl().unwrap();
    let cut = &text[..text.len() - 10];
    match OfflineDataset::from_jsonl(cut) {
        Err(Error::Parse { line, .. }) => assert_eq!(line, 6),
        other => panic!("{other:?}"),
    }
    let lines: Vec<&str> = text.lines().collect();
    let dropped = lines[..5].join("\n");
    match OfflineDataset::from_jsonl(&dropped) {
        Err(Error::Parse { line, message }) => {
            assert_eq!(line, 6);
            assert!(message.contains("expected 5"));
        }
        other => panic!("{other:?}"),
    }
    let mut broken = lines.clone();
    broken[2] = "{\"states\": oops}";
    assert!(matches!(OfflineDataset::from_jsonl(&broken.join("\n")), Err(Error::Parse { line: 3, .. })));
    assert!(matches!(OfflineDataset::from_jsonl(""), Err(Error::Parse { line: 1, .. })));
}

#[test]
fn stats_and_dims_are_validated() {
    let data = gen_linear_gaussian_dataset(&scalar_spec(0.5, 0.5, 0.0), 5, 2, 1).unwrap();
    let mut bad = data.clone();
    bad.header.stats.return_mean += 1e-6;
    let text = bad.to_jsonl().unwrap();
    assert!(matches!(OfflineDataset::from_jsonl(&text), Err(Error::Validation(_))));
    let mut bad = data.clone();
    bad.episodes[0].traj.states[0].push(1.0);
    assert!(matches!(bad.validate(), Err(Error::Validation(_))));
    let mut bad = data;
    bad.header.horizon = 1;
    assert!(bad.validate().is_err());
}
