use plateval::classify::{extract_features, svm_predict, LabeledDataset};
use plateval::cluster::{kmeans_fit_image, mean_shift_fit, quantize};
use plateval::imagecore::{load_image, normalize};
use plateval::pipeline::{assess_image, demo_model, segment_plate, write_artifacts, PipelineConfig};
use plateval::segment::subtract_background;
use plateval::synth::{label_color, render, render_patch, write_patch_dataset, ItemSpec, PlateSpec, Shape};
use plateval::{ColorSpace, Connectivity, ImageBuffer, KMeansParams, Taxonomy};

fn rect(label: &str, x: usize, y: usize, w: usize, h: usize) -> ItemSpec {
    ItemSpec { label: label.into(), shape: Shape::Rect { x, y, w, h }, color: None }
}

fn lunch() -> PlateSpec {
    PlateSpec::centered(vec![
        rect("carrot", 60, 70, 60, 40),
        rect("chicken", 135, 70, 50, 50),
        rect("fries", 80, 140, 90, 40),
    ])
}

#[test]
fn png_round_trip_is_lossless() {
    let (img, _) = render(&lunch()).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("lunch.png");
    img.save_png(&path).unwrap();
    assert_eq!(load_image(&path).unwrap(), img);
}

#[test]
fn larger_photo_is_resized_before_segmenting() {
    let mut spec = lunch();
    spec.width = 512;
    spec.height = 512;
    spec.plate.cx = 255.5;
    spec.plate.cy = 255.5;
    spec.plate.radius = 220.0;
    for item in &mut spec.items {
        if let Shape::Rect { x, y, w, h } = &mut item.shape {
            (*x, *y, *w, *h) = (*x * 2, *y * 2, *w * 2, *h * 2);
        }
    }
    let (img, _) = render(&spec).unwrap();
    let seg = segment_plate(&img, &PipelineConfig::default()).unwrap();
    assert_eq!((seg.normalized.width(), seg.normalized.height()), (256, 256));
    let out = assess_image(&img, demo_model(), &Taxonomy::default(), &PipelineConfig::default()).unwrap();
    let labels: Vec<&str> = out.plate.items.iter().map(|i| i.label.as_str()).collect();
    for expected in ["carrot", "chicken", "fries"] {
        assert!(labels.contains(&expected), "{labels:?}");
    }
    assert!((out.plate.shares.junk - 3600.0 / 8500.0 * 100.0).abs() < 2.0, "{:?}", out.plate.shares);
}

#[test]
fn every_color_space_finds_the_same_items() {
    let (img, truth) = render(&lunch()).unwrap();
    for space in [ColorSpace::Rgb, ColorSpace::Hsv, ColorSpace::Lab] {
        for connectivity in [Connectivity::Four, Connectivity::Eight] {
            let config = PipelineConfig { color_space: space, connectivity, ..PipelineConfig::default() };
            let out = assess_image(&img, demo_model(), &Taxonomy::default(), &config).unwrap();
            let mut got: Vec<(String, usize)> =
                out.plate.items.iter().map(|i| (i.label.clone(), i.pixel_count)).collect();
            let mut want: Vec<(String, usize)> = truth.items.iter().map(|t| (t.label.clone(), t.pixels)).collect();
            got.sort();
            want.sort();
            assert_eq!(got, want, "{space} {connectivity:?}");
        }
    }
}

#[test]
fn quantized_plate_keeps_its_colors() {
    let (img, _) = render(&lunch()).unwrap();
    let model = kmeans_fit_image(&img, &KMeansParams { k: 5, ..KMeansParams::default() }).unwrap();
    let (q, palette) = quantize(&img, &model).unwrap();
    assert_eq!(q, img);
    assert_eq!(palette.rgb.len(), 5);
}

#[test]
fn mean_shift_finds_plate_colors() {
    let (img, _) = render(&lunch()).unwrap();
    let small = ImageBuffer::new(
        32,
        32,
        ColorSpace::Rgb,
        (0..32 * 32).flat_map(|i| img.pixel((i % 32) * 8, (i / 32) * 8).to_vec()).collect(),
    )
    .unwrap();
    let samples: Vec<Vec<f64>> = small.pixels().map(<[f64]>::to_vec).collect();
    let model = mean_shift_fit(&samples, 30.0, 100, 1e-3).unwrap();
    assert!(model.k >= 3, "{}", model.k);
}

#[test]
fn artifacts_are_written() {
    let (img, _) = render(&lunch()).unwrap();
    let out = assess_image(&img, demo_model(), &Taxonomy::default(), &PipelineConfig::default()).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let paths = write_artifacts(&out, dir.path()).unwrap();
    assert_eq!(paths.masks.len(), 3);
    let overlay = load_image(&paths.overlay).unwrap();
    assert_eq!((overlay.width(), overlay.height()), (256, 256));
    assert!(paths.labels.exists() && paths.palette.exists());
}

#[test]
fn dataset_directory_features_match_direct_masks() {
    let dir = tempfile::tempdir().unwrap();
    write_patch_dataset(dir.path(), &["apple", "rice"], 3).unwrap();
    let data = LabeledDataset::load_dir(dir.path()).unwrap();
    assert_eq!(data.len(), 6);
    let (img, mask) = render_patch(label_color("apple").unwrap(), 0);
    let direct = extract_features(&img, &mask).unwrap();
    assert_eq!(data.samples[0].0, direct);

    let loaded = normalize(&load_image(dir.path().join("rice/01.png")).unwrap());
    let found = subtract_background(&loaded).unwrap();
    let features = extract_features(&loaded, &found).unwrap();
    assert_eq!(svm_predict(demo_model(), &features.0).unwrap().0, "rice");
}
