use std::fs;

use texgram_core::engine::{forward_with_taps, load_model_bundle, save_model_bundle, EngineError, InputSpec};
use texgram_core::synthetic::{alexnet_features, conv_relu_stack, gaussian_image, mixed_kinds};

#[test]
fn alexnet_taps_have_expected_channels() {
    let net = alexnet_features(0).unwrap();
    let dims: Vec<_> = net.taps().iter().map(|t| net.node_shape(t).unwrap()).collect();
    assert_eq!(
        dims,
        vec![[64, 55, 55], [192, 27, 27], [384, 13, 13], [256, 13, 13], [256, 13, 13]]
    );
    let image = gaussian_image(3, [3, 224, 224]);
    let taps = forward_with_taps(&net, &image).unwrap();
    let channels: Vec<_> = taps.iter().map(|f| f.channels).collect();
    assert_eq!(channels, vec![64, 192, 384, 256, 256]);
}

#[test]
fn round_trip_preserves_outputs_bitwise() {
    let dir = tempfile::tempdir().unwrap();
    let net = mixed_kinds(4, InputSpec::new([3, 16, 16])).unwrap();
    save_model_bundle(&net, dir.path()).unwrap();
    let back = load_model_bundle(dir.path()).unwrap();
    assert_eq!(back.taps(), net.taps());
    assert_eq!(back.nodes(), net.nodes());
    let image = gaussian_image(9, [3, 16, 16]);
    let a = forward_with_taps(&net, &image).unwrap();
    let b = forward_with_taps(&back, &image).unwrap();
    assert_eq!(a, b);
}

fn saved_stack() -> tempfile::TempDir {
    let dir = tempfile::tempdir().unwrap();
    let net = conv_relu_stack(1, "stack", InputSpec::new([3, 8, 8]), &[4], None).unwrap();
    save_model_bundle(&net, dir.path()).unwrap();
    dir
}

fn first_blob(dir: &std::path::Path) -> std::path::PathBuf {
    let mut bins: Vec<_> = fs::read_dir(dir)
        .unwrap()
        .map(|e| e.unwrap().path())
        .filter(|p| p.extension().is_some_and(|e| e == "bin"))
        .collect();
    bins.sort();
    bins.remove(0)
}

#[test]
fn blob_length_mismatch_is_a_shape_error() {
    let dir = saved_stack();
    let blob = first_blob(dir.path());
    let mut bytes = fs::read(&blob).unwrap();
    bytes.truncate(bytes.len() - 4);
    fs::write(&blob, bytes).unwrap();
    // drop checksums so the length check is what fires
    let manifest = dir.path().join("manifest.json");
    let text = fs::read_to_string(&manifest).unwrap();
    let mut json: serde_json::Value = serde_json::from_str(&text).unwrap();
    for node in json["nodes"].as_array_mut().unwrap() {
        if let Some(blobs) = node["blobs"].as_object_mut() {
            for b in blobs.values_mut() {
                b.as_object_mut().unwrap().remove("sha256");
            }
        }
    }
    fs::write(&manifest, json.to_string()).unwrap();
    let err = load_model_bundle(dir.path()).unwrap_err();
    assert!(matches!(err, EngineError::ShapeMismatch { .. }));
    assert!(err.to_string().contains("shape mismatch"));
}

#[test]
fn corrupted_blob_fails_checksum() {
    let dir = saved_stack();
    let blob = first_blob(dir.path());
    let mut bytes = fs::read(&blob).unwrap();
    bytes[0] ^= 0xff;
    fs::write(&blob, bytes).unwrap();
    assert!(matches!(load_model_bundle(dir.path()), Err(EngineError::Checksum(_))));
}

#[test]
fn manifest_errors() {
    let dir = saved_stack();
    let manifest = dir.path().join("manifest.json");
    let original = fs::read_to_string(&manifest).unwrap();

    let mut json: serde_json::Value = serde_json::from_str(&original).unwrap();
    json["format_version"] = 7.into();
    fs::write(&manifest, json.to_string()).unwrap();
    assert!(matches!(load_model_bundle(dir.path()), Err(EngineError::Manifest(_))));

    let mut json: serde_json::Value = serde_json::from_str(&original).unwrap();
    json["nodes"][1]["kind"] = "gelu".into();
    fs::write(&manifest, json.to_string()).unwrap();
    assert!(matches!(load_model_bundle(dir.path()), Err(EngineError::UnknownKind(k)) if k == "gelu"));

    let mut json: serde_json::Value = serde_json::from_str(&original).unwrap();
    json["taps"] = serde_json::json!(["nope"]);
    fs::write(&manifest, json.to_string()).unwrap();
    assert!(matches!(load_model_bundle(dir.path()), Err(EngineError::UnknownTap(_))));

    fs::remove_file(&manifest).unwrap();
    assert!(matches!(load_model_bundle(dir.path()), Err(EngineError::Io { .. })));
}
