use std::f64::consts::{FRAC_PI_2, PI, TAU};

use super::*;
use crate::policy::PolicySpec;
use crate::world::{Aabb, MotionModel, Obstacle, Shape};

fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

fn desk_net(seed: u64) -> PolicyNet<f64> {
    PolicyNet::init(PolicySpec::desk_panoramic(), &mut rng(seed))
}

fn zero_net() -> PolicyNet<f64> {
    let mut net = desk_net(1);
    for i in 0..net.store.entries.len() {
        net.store.data_mut(i).iter_mut().for_each(|v| *v = 0.0);
    }
    net
}

fn short_hover(duration: f64, density: usize) -> TaskSpec {
    let mut task = TaskSpec::hover(0.0, density, 2.0);
    task.duration = duration;
    task
}

#[test]
fn polyline_interpolates_by_arc_length() {
    let line = Polyline::new(vec![Vec3::new(0.0, 0.0, 2.0), Vec3::new(10.0, 0.0, 2.0)]);
    assert_eq!(line.total_length(), 10.0);
    assert_eq!(line.at(5.0), Vec3::new(5.0, 0.0, 2.0));
    assert_eq!(line.at(-3.0), Vec3::new(0.0, 0.0, 2.0));
    assert_eq!(line.at(25.0), Vec3::new(10.0, 0.0, 2.0));
    assert_eq!(line.heading(5.0), Vec3::new(1.0, 0.0, 0.0));

    let point = Polyline::new(vec![Vec3::new(1.0, 2.0, 3.0)]);
    assert_eq!(point.at(7.0), Vec3::new(1.0, 2.0, 3.0));
    assert_eq!(point.heading(0.0), Vec3::new(1.0, 0.0, 0.0));

    // Film goal: two waypoints 10 m apart at 1 m/s puts t=5 s at the midpoint.
    let task = TaskSpec::film(
        vec![Vec3::new(0.0, 0.0, 2.0), Vec3::new(10.0, 0.0, 2.0)],
        Vec3::new(5.0, 10.0, 2.0),
        1.0,
        0,
        0.0,
    );
    let (goal, psi) = goal_stream(&task, 5.0);
    assert_eq!(goal, Vec3::new(5.0, 0.0, 2.0));
    assert!((psi - FRAC_PI_2).abs() < 1e-12, "camera should face the subject");
}

#[test]
fn goal_streams_follow_task_geometry() {
    let hover = TaskSpec::hover(1.25, 3, 2.0);
    let (g0, psi0) = goal_stream(&hover, 0.0);
    for t in [0.0, 13.7, 119.9] {
        let (g, psi) = goal_stream(&hover, t);
        assert_eq!(g, g0);
        assert_eq!(psi, psi0);
        assert_eq!(psi, 1.25);
    }

    let path = vec![
        Vec3::new(-10.0, -4.0, 3.0),
        Vec3::new(0.0, 6.0, 3.5),
        Vec3::new(12.0, -2.0, 2.5),
    ];
    let task = TaskSpec::follow(path.clone(), 1.5, 4, 2.0);
    let line = Polyline::new(path);
    for t in [0.0, 3.0, 8.5, 40.0] {
        let (goal, psi) = goal_stream(&task, t);
        let target = line.at(1.5 * t);
        let gap = goal - target;
        assert!((gap.norm() - 5.0).abs() < 1e-9, "offset magnitude drifted at t={t}");
        // The commanded heading looks from the goal back at the target.
        let look = Vec3::new(psi.cos(), psi.sin(), 0.0);
        let back = Vec3::new(-gap.x, -gap.y, 0.0).normalized();
        assert!((look - back).norm() < 1e-9);
    }
}

#[test]
fn clean_hover_trial_has_no_collisions() {
    let task = short_hover(10.0, 0);
    let log = run_trial(&task, &zero_net(), 42, 0.0);
    assert!(log.collision_intervals.is_empty());
    assert_eq!(log.collision_time, 0.0);
    assert!(!log.diverged);
    let total: f64 = log.steps.iter().map(|s| s.dt).sum();
    assert!((total - task.duration).abs() < 1e-9, "steps covered {total} of {}", task.duration);
    assert!((log.steps.last().unwrap().t - task.duration).abs() < 1e-9);
    assert!(log.mean_tracking_loss > 0.0, "a hovering mismatch should register");
    assert_eq!(log.goal_trace.len(), log.steps.len());
}

#[test]
fn pinned_obstacle_forces_early_collision() {
    let bounds = Aabb {
        min: Vec3::splat64(-20.0, -20.0, 0.0),
        max: Vec3::splat64(20.0, 20.0, 8.0),
    };
    let mut scene: Scene<f64> = Scene::empty(bounds, Some(0.0));
    scene.obstacles.push(Obstacle {
        shape: Shape::Sphere { radius: 1.3 },
        position: Vec3::new(DEFAULT_ANCHOR[0], DEFAULT_ANCHOR[1], DEFAULT_ANCHOR[2]),
        motion: MotionModel::Static,
    });
    let task = short_hover(20.0, 0);
    let log = run_trial_in(&task, &zero_net(), 7, 0.0, scene, rng(7));
    assert!(!log.collision_intervals.is_empty());
    assert!(log.collision_intervals[0].0 < 5.0, "collision should start almost immediately");
    assert!(log.collision_time > 15.0);
    for w in log.collision_intervals.windows(2) {
        assert!(w[0].1 <= w[1].0, "intervals must be disjoint");
    }
    for &(a, b) in &log.collision_intervals {
        assert!(a >= 0.0 && b <= task.duration + 1e-9 && a < b);
    }
}

#[test]
fn identical_seeds_reproduce_trials() {
    let task = short_hover(5.0, 2);
    let net = desk_net(3);
    let a = run_trial(&task, &net, 11, 0.05);
    let b = run_trial(&task, &net, 11, 0.05);
    assert_eq!(a, b);
    let c = run_trial(&task, &net, 12, 0.05);
    assert_ne!(a.steps[0].p, c.steps[0].p, "different seeds should spawn differently");
}

fn synthetic_log(seed: u64, colliding_steps: usize, dt: f64) -> TrialLog {
    let mut steps = Vec::new();
    let mut intervals = Vec::new();
    let mut t = 0.0;
    for i in 0..10 {
        t += dt;
        let collision = i < colliding_steps;
        steps.push(EvalStep {
            t,
            p: Vec3::zero(),
            v: Vec3::zero(),
            u: Vec3::zero(),
            clearance: if collision { 0.1 } else { 2.0 },
            collision,
            dt,
        });
    }
    if colliding_steps > 0 {
        intervals.push((0.0, colliding_steps as f64 * dt));
    }
    let collision_time = colliding_steps as f64 * dt;
    TrialLog {
        seed,
        steps,
        collision_intervals: intervals,
        goal_trace: vec![(0.0, Vec3::zero())],
        diverged: false,
        duration: 10.0 * dt,
        collision_time,
        mean_tracking_loss: 0.0,
    }
}

#[test]
fn aggregate_matches_hand_formulas_and_rescan() {
    let task = short_hover(4.0, 0);
    let cfg = EvalConfig::default();
    let logs =
        vec![synthetic_log(1, 0, 0.4), synthetic_log(2, 3, 0.4), synthetic_log(3, 0, 0.4)];
    let report = aggregate(&task, &cfg, &logs);
    assert_eq!(report.successes, 2);
    assert_eq!(report.sr, 2.0 / 3.0);
    assert!((report.ct - 0.4).abs() < 1e-12);

    // Independent re-scan of the raw collision flags.
    for (log, record) in logs.iter().zip(&report.records) {
        let rescan: f64 = log.steps.iter().filter(|s| s.collision).map(|s| s.dt).sum();
        assert_eq!(rescan, record.collision_time);
        assert_eq!(record.collided, !log.collision_intervals.is_empty());
    }

    let clean = vec![synthetic_log(1, 0, 0.4); 10];
    let perfect = aggregate(&task, &cfg, &clean);
    assert_eq!(perfect.sr, 1.0);
    assert_eq!(perfect.ct, 0.0);
}

#[test]
fn noise_zero_is_bitwise_baseline() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("net.ckpt");
    let net = desk_net(5);
    net.save(&path).unwrap();
    let task = short_hover(4.0, 2);
    let cfg = EvalConfig { trials: 2, seed_base: 50, noise_gamma: 0.0 };

    let baseline = evaluate(&task, &PolicyNet::<f64>::load(&path).unwrap(), &cfg);
    let swept = sweep_noise::<f64>(&task, &path, &[0.0, 0.1], &cfg).unwrap();
    assert_eq!(swept.len(), 2);
    assert_eq!(swept[0].report, baseline.report);
    assert_eq!(swept[0].logs, baseline.logs);
    assert_eq!(swept[0].report.noise_gamma, 0.0);
    assert_eq!(swept[1].report.noise_gamma, 0.1);
    assert_ne!(
        swept[1].logs[0].steps[0].u, baseline.logs[0].steps[0].u,
        "depth noise should perturb the very first command"
    );
}

#[test]
fn parallel_evaluation_matches_serial_and_preserves_checkpoint() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("net.ckpt");
    desk_net(9).save(&path).unwrap();
    let before = std::fs::read(&path).unwrap();

    let task = short_hover(3.0, 2);
    let cfg = EvalConfig { trials: 5, seed_base: 100, noise_gamma: 0.0 };
    let serial = evaluate_file_with_threads::<f64>(&task, &path, &cfg, 1).unwrap();
    let parallel = evaluate_file_with_threads::<f64>(&task, &path, &cfg, 3).unwrap();
    assert_eq!(serial.report, parallel.report);
    assert_eq!(serial.logs, parallel.logs);
    assert_eq!(std::fs::read(&path).unwrap(), before, "evaluation must not touch checkpoints");
}

#[test]
fn sweeps_echo_their_parameters() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("net.ckpt");
    desk_net(13).save(&path).unwrap();
    let cfg = EvalConfig { trials: 1, seed_base: 4, noise_gamma: 0.0 };

    let runs = sweep_size::<f64>(&path, &short_hover(2.0, 1), &DEFAULT_SIZE_RADII, &cfg).unwrap();
    assert_eq!(runs.len(), 7);
    for ((radius, run), want) in runs.iter().zip(DEFAULT_SIZE_RADII) {
        assert_eq!(*radius, want);
        assert_eq!(run.report.task.obstacle_size, want);
        assert_eq!(run.report.task.obstacle_speed, 5.0);
        assert!(run.report.ct.is_finite());
    }
}

#[test]
fn heading_ablation_covers_the_grid() {
    let dir = tempfile::tempdir().unwrap();
    let fixed_path = dir.path().join("fixed.ckpt");
    let free_path = dir.path().join("free.ckpt");
    desk_net(21).save(&fixed_path).unwrap();
    desk_net(22).save(&free_path).unwrap();

    let template = short_hover(2.0, 1);
    let cfg = EvalConfig { trials: 2, seed_base: 8, noise_gamma: 0.0 };
    let ab = heading_ablation::<f64>(&fixed_path, &free_path, 4, &template, &cfg).unwrap();
    assert_eq!(ab.headings, vec![0.0, TAU / 4.0, PI, 3.0 * TAU / 4.0]);
    assert_eq!(ab.fixed.len(), 4);
    assert_eq!(ab.free.len(), 4);
    for (h, r) in ab.headings.iter().zip(&ab.fixed) {
        match &r.task.goal {
            TaskGoal::Hover { psi_c, .. } => assert_eq!(psi_c, h),
            _ => panic!("heading ablation must stay on hover"),
        }
        assert_eq!(r.trials, 2);
    }

    let (mean, var) = sr_stats(&ab.fixed);
    assert!((0.0..=1.0).contains(&mean));
    assert!(var >= 0.0);
}

#[test]
fn trajectory_csv_lists_every_step() {
    let task = short_hover(2.0, 1);
    let log = run_trial(&task, &desk_net(31), 77, 0.0);
    let csv = trajectory_csv(&log);
    let lines: Vec<&str> = csv.lines().collect();
    assert_eq!(lines[0], "t,px,py,pz,vx,vy,vz,ux,uy,uz,clearance,collision");
    assert_eq!(lines.len(), 1 + log.steps.len());
    let first: Vec<&str> = lines[1].split(',').collect();
    assert_eq!(first.len(), 12);
    assert_eq!(first[0].parse::<f64>().unwrap(), log.steps[0].t);
    assert!(first[11] == "0" || first[11] == "1");
}

#[test]
fn summary_grid_is_aligned() {
    let task = short_hover(2.0, 0);
    let cfg = EvalConfig { trials: 2, seed_base: 3, noise_gamma: 0.0 };
    let run = evaluate(&task, &zero_net(), &cfg);
    let grid = summary_grid(&[
        ("baseline".to_string(), &run.report),
        ("noise 0.2".to_string(), &run.report),
    ]);
    let lines: Vec<&str> = grid.lines().collect();
    assert_eq!(lines.len(), 3);
    assert!(lines[0].starts_with("condition"));
    assert!(lines[1].contains("2/2"));
    let widths: Vec<usize> = lines.iter().map(|l| l.len()).collect();
    assert_eq!(widths[1], widths[2], "data rows should align");
}

#[test]
fn replay_svg_marks_collisions_and_obstacles() {
    let pts: Vec<(f64, Vec3<f64>, bool)> = (0..20)
        .map(|i| {
            let t = i as f64 * 0.1;
            let collide = (8..=11).contains(&i);
            (t, Vec3::new(t * 2.0, (t * 3.0).sin(), 4.0), collide)
        })
        .collect();
    let scene = Scene {
        obstacles: vec![
            Obstacle {
                shape: Shape::Sphere { radius: 0.8 },
                position: Vec3::new(1.5, 0.5, 4.0),
                motion: MotionModel::Static,
            },
            Obstacle {
                shape: Shape::VerticalCapsule { radius: 0.4, half_height: 3.0 },
                position: Vec3::new(3.0, -0.5, 0.0),
                motion: MotionModel::Static,
            },
        ],
        ground_height: Some(0.0),
        bounds: Aabb { min: Vec3::new(-20.0, -20.0, 0.0), max: Vec3::new(20.0, 20.0, 20.0) },
    };
    let svg = replay_svg(&pts, Some(&scene));
    assert!(svg.starts_with("<svg xmlns="));
    assert!(svg.trim_end().ends_with("</svg>"));
    assert!(svg.contains("class=\"path\""));
    assert!(svg.contains("class=\"collision\""));
    assert_eq!(svg.matches("class=\"obstacle\"").count(), 2);
    assert!(svg.contains("class=\"start\"") && svg.contains("class=\"end\""));
    // cheap well-formedness: tags balance and nothing needs escaping
    assert_eq!(svg.matches('<').count(), svg.matches('>').count());
    assert!(!svg.contains('&'));
    assert_eq!(svg.matches('"').count() % 2, 0);
}

#[test]
fn replay_svg_of_empty_trajectory_is_valid() {
    let svg = replay_svg(&[], None);
    assert!(svg.starts_with("<svg xmlns="));
    assert!(svg.trim_end().ends_with("</svg>"));
    assert!(!svg.contains("class=\"path\""));
    assert_eq!(svg.matches('<').count(), svg.matches('>').count());
}
