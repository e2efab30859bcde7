use atv_stereo::cascade::CascadeConfig;
use atv_stereo::costvol::{build_cost_volume, uniform_hypotheses};
use atv_stereo::features::{build_feature_pyramid, FeatureMap};
use atv_stereo::synth::{builtin_scene, render_views};

#[test]
fn debug_cost_curve() {
    let scene = builtin_scene("flat").unwrap();
    let (views, depths, _) = render_views(&scene).unwrap();
    let config = CascadeConfig::with_range(scene.d_min, scene.d_max);
    let pyramids: Vec<_> = views.iter().enumerate()
        .map(|(i, v)| build_feature_pyramid(v, i, &config.features).unwrap())
        .collect();
    let feats: Vec<&FeatureMap> = pyramids.iter().map(|p| &p[0]).collect();
    let cams: Vec<_> = scene.cameras.iter().map(|c| c.scaled_down(4).unwrap()).collect();
    let hyps = uniform_hypotheses(scene.d_min, scene.d_max, 64, 80, 64).unwrap();
    let vol = build_cost_volume(&feats, &cams, &hyps).unwrap();
    let step = (scene.d_max - scene.d_min) / 64.0;
    for (px, py) in [(40usize, 32usize), (25, 20), (55, 45)] {
        let gt = depths[0][(py * 4, px * 4)];
        let jstar = ((gt - scene.d_min) / step - 0.5).round() as usize;
        let curve: Vec<f32> = (0..64).map(|j| vol.costs()[(j, py, px)]).collect();
        let jmin = (0..64).min_by(|&a, &b| curve[a].total_cmp(&curve[b])).unwrap();
        println!("pixel ({px},{py}): gt={gt:.3} j*={jstar} argmin={jmin}");
        let lo = jstar.saturating_sub(6);
        let hi = (jstar + 7).min(64);
        println!("  costs[{}..{}] = {:?}", lo, hi, &curve[lo..hi].iter().map(|c| (c*1000.0).round()/1000.0).collect::<Vec<_>>());
        let far: f32 = curve.iter().enumerate().filter(|(j, _)| (*j as i64 - jstar as i64).abs() > 8)
            .map(|(_, c)| *c).sum::<f32>() / curve.iter().enumerate().filter(|(j,_)| (*j as i64 - jstar as i64).abs() > 8).count() as f32;
        println!("  mean far cost = {far:.3}, min cost = {:.4}", curve[jmin]);
    }
}
