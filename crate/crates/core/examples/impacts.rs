use centroidal_ekf::model::default_quadruped;
use centroidal_ekf::simlab::{simulate, ControllerGains, Scenario, ScenarioKind};

fn main() {
    let model = default_quadruped();
    for kind in [ScenarioKind::Trot, ScenarioKind::Jump] {
        let scenario = Scenario::new(kind, 3.0);
        let log = simulate(&model, &scenario, &ControllerGains::default()).unwrap();
        let mut max_dl: f64 = 0.0;
        let mut max_dk: f64 = 0.0;
        let mut sum_dl = 0.0;
        let mut count = 0;
        for pair in log.frames.windows(2) {
            let gained = pair[1]
                .contact_truth
                .iter()
                .zip(&pair[0].contact_truth)
                .any(|(now, before)| *now && !*before);
            if gained {
                let dl = (pair[1].x_truth.linear_momentum - pair[0].x_truth.linear_momentum).norm();
                let dk = (pair[1].x_truth.angular_momentum - pair[0].x_truth.angular_momentum).norm();
                max_dl = max_dl.max(dl);
                max_dk = max_dk.max(dk);
                sum_dl += dl;
                count += 1;
            }
        }
        println!(
            "{}: {count} touchdowns, max |dl| {max_dl:.4}, mean |dl| {:.4}, max |dk| {max_dk:.4}",
            kind.name(),
            sum_dl / count.max(1) as f64
        );
    }
}
