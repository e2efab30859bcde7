use atv_stereo::cascade::{run_stage, CascadeConfig};
use atv_stereo::costvol::{build_cost_volume, uniform_hypotheses};
use atv_stereo::features::{build_feature_pyramid, FeatureMap};
use atv_stereo::synth::{builtin_scene, render_views};

#[test]
fn debug_edge() {
    let scene = builtin_scene("flat").unwrap();
    let (views, depths, _) = render_views(&scene).unwrap();
    let mut config = CascadeConfig::with_range(scene.d_min, scene.d_max);
    config.beta = 40.0;
    let pyramids: Vec<_> = views.iter().enumerate()
        .map(|(i, v)| build_feature_pyramid(v, i, &config.features).unwrap())
        .collect();
    let feats: Vec<&FeatureMap> = pyramids.iter().map(|p| &p[0]).collect();
    let cams: Vec<_> = scene.cameras.iter().map(|c| c.scaled_down(4).unwrap()).collect();
    let hyps = uniform_hypotheses(scene.d_min, scene.d_max, 64, 80, 64).unwrap();
    let vol = build_cost_volume(&feats, &cams, &hyps).unwrap();
    let stage = run_stage(1, &feats, &cams, &hyps, &config).unwrap();

    // For each column band, report mean valid views (over planes) and depth error
    for x in [4usize, 20, 40, 60, 70, 75, 78] {
        let mut errs = 0.0; let mut n = 0.0;
        let mut vmin = 255u8; let mut vmax = 0u8;
        for y in 8..56 {
            let gt = depths[0][(y * 4, x * 4)];
            errs += (stage.estimate.depth[(y, x)] - gt).abs();
            n += 1.0;
            for j in 0..64 {
                let v = vol.valid_views()[(j, y, x)];
                vmin = vmin.min(v); vmax = vmax.max(v);
            }
        }
        println!("col {x}: mean err {:.4}, valid views {}..{}", errs / n, vmin, vmax);
    }
    // cost curve at a bad edge pixel
    let (px, py) = (76usize, 32usize);
    let gt = depths[0][(py*4, px*4)];
    let step = (scene.d_max - scene.d_min)/64.0;
    let jstar = ((gt - scene.d_min)/step - 0.5).round() as usize;
    let curve: Vec<f32> = (0..64).map(|j| vol.costs()[(j, py, px)]).collect();
    let valid: Vec<u8> = (0..64).map(|j| vol.valid_views()[(j, py, px)]).collect();
    println!("pixel ({px},{py}) gt={gt:.3} j*={jstar} depth={:.3}", stage.estimate.depth[(py,px)]);
    println!("costs: {:?}", curve.iter().map(|c| (c*100.0).round()/100.0).collect::<Vec<_>>());
    println!("valid: {valid:?}");
}
