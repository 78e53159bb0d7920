use promptforge::image::Image;
use promptforge_demo::{augment_kinds, corruption_kinds, rgba, Demo, PromptKnobs};

fn demo() -> Demo {
    Demo::build(2, 48, 5).unwrap()
}

#[test]
fn rgba_layout() {
    let img = Image::from_fn(2, 3, |c, y, x| if c == 0 { (y * 3 + x) as f32 / 5.0 } else { 0.0 });
    let px = rgba(&img);
    assert_eq!(px.len(), 24);
    assert_eq!(&px[..4], &[0, 0, 0, 255]);
    assert_eq!(&px[20..], &[255, 0, 0, 255]);
}

#[test]
fn neutral_knobs_shrink_into_the_centre() {
    let d = demo();
    let (out, fraction) = d.prompt_image(&PromptKnobs::default()).unwrap();
    // a column is inside when its source coordinate lands within [0, 47]
    let c = 23.5f64;
    let inside = (0..48).filter(|&x| ((x as f64 - c) / 0.73).abs() <= c).count() as f64;
    let want = 1.0 - (inside / 48.0).powi(2);
    assert!((fraction - want).abs() < 1e-6, "{fraction} vs {want}");
    // no pattern: the masked border is exactly black
    assert_eq!(out.get(0, 0, 0), 0.0);
    let patterned = d
        .prompt_image(&PromptKnobs {
            pattern: 0.5,
            ..Default::default()
        })
        .unwrap()
        .0;
    assert_ne!(patterned.get(0, 0, 0), 0.0);
}

#[test]
fn scale_knob_moves_the_mask() {
    let d = demo();
    let grow = PromptKnobs {
        scale: 3.0,
        ..Default::default()
    };
    let (_, big) = d.prompt_image(&grow).unwrap();
    let (_, base) = d.prompt_image(&PromptKnobs::default()).unwrap();
    assert!(big < base, "{big} vs {base}");
}

#[test]
fn every_listed_kind_renders() {
    let d = demo();
    for k in augment_kinds().split(',') {
        assert_eq!(d.augment_image(k, 15, true).unwrap().height(), 48, "{k}");
    }
    for k in corruption_kinds().split(',') {
        assert_eq!(d.corrupt_image(k, 3, 1).unwrap().width(), 48, "{k}");
    }
    assert_eq!(d.augment_image("identity", 0, false).unwrap(), *d.image());
    assert!(d.augment_image("warp", 3, false).is_err());
    assert!(d.augment_image("rotate", 31, false).is_err());
    assert!(d.corrupt_image("fog", 1, 0).is_err());
    assert!(d.corrupt_image("pixelate", 0, 0).is_err());
}
