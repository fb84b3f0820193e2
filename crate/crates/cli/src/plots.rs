//! Plot-ready CSV tables, one per figure. Each starts with `# key=value`
//! metadata lines followed by a header row.

use std::fmt::Write as _;

use uwnmpc::mission::{MissionConfig, MissionLog};

fn table(meta: &[(&str, String)], header: &str) -> String {
    let mut s = String::new();
    for (k, v) in meta {
        let _ = writeln!(s, "# {k}={v}");
    }
    let _ = writeln!(s, "{header}");
    s
}

pub fn render(cfg: &MissionConfig, log: &MissionLog, meta: &[(&str, String)]) -> Vec<(&'static str, String)> {
    let ws = &cfg.workspace;
    let b = &cfg.ocp.bounds;
    let taus = &cfg.ocp.thrust_box;
    let rows: Vec<(f64, &uwnmpc::VehicleState)> = std::iter::once((0.0, &log.initial_state))
        .chain(log.records.iter().map(|r| (r.time, &r.state)))
        .collect();

    let mut xy = table(meta, "time,x,y");
    for (t, s) in &rows {
        let _ = writeln!(xy, "{t},{},{}", s.x, s.y);
    }

    // Obstacle discs, the inflated no-go discs, waypoints and the tank outline.
    let mut obs = table(meta, "kind,x,y,radius");
    for o in &ws.obstacles {
        let _ = writeln!(obs, "obstacle,{},{},{}", o.center[0], o.center[1], o.radius);
        let _ = writeln!(obs, "safety,{},{},{}", o.center[0], o.center[1], o.radius + ws.r_bar);
    }
    for w in &cfg.mission.waypoints {
        let _ = writeln!(obs, "waypoint,{},{},{}", w.x, w.y, cfg.ocp.terminal_region.radius);
    }
    let _ = writeln!(obs, "box_min,{},{},0", ws.box_min[0], ws.box_min[1]);
    let _ = writeln!(obs, "box_max,{},{},0", ws.box_max[0], ws.box_max[1]);

    let z_lo = ws.box_min[2] + ws.r_bar;
    let z_hi = ws.box_max[2] - ws.r_bar;
    let mut zpsi = table(meta, "time,z,psi,z_min,z_max");
    for (t, s) in &rows {
        let _ = writeln!(zpsi, "{t},{},{},{z_lo},{z_hi}", s.z, s.psi);
    }

    let mut speed = table(meta, "time,planar_speed,limit");
    for (t, s) in &rows {
        let _ = writeln!(speed, "{t},{},{}", b.planar_speed(s), b.v_planar_max);
    }

    let mut hr = table(meta, "time,w_r,r_r,w_max,r_max");
    for (t, s) in &rows {
        let _ = writeln!(hr, "{t},{},{},{},{}", s.w_r, s.r_r, b.w_max, b.r_max);
    }

    let mut thr = table(meta, "time,tau_po,tau_s,tau_ve,tau_l,max_po,max_s,max_ve,max_l");
    for r in &log.records {
        let a = &r.applied;
        let t = r.time - log.tick;
        let _ = writeln!(
            thr,
            "{t},{},{},{},{},{},{},{},{}",
            a.tau_po, a.tau_s, a.tau_ve, a.tau_l, taus[0], taus[1], taus[2], taus[3]
        );
    }

    vec![
        ("trajectory_xy.csv", xy),
        ("obstacles.csv", obs),
        ("z_psi.csv", zpsi),
        ("planar_speed.csv", speed),
        ("heave_yaw_rate.csv", hr),
        ("thrusters.csv", thr),
    ]
}
