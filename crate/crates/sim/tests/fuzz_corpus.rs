use std::fs;
use std::path::PathBuf;

use dris_sim::parse_config_str;

#[test]
fn config_seeds_parse_as_expected() {
    let dir = PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../fuzz/corpus/config_parse");
    let mut seen = 0;
    for entry in fs::read_dir(&dir).unwrap() {
        let path = entry.unwrap().path();
        let name = path.file_name().unwrap().to_string_lossy().into_owned();
        let text = fs::read_to_string(&path).unwrap();
        let result = parse_config_str(&text, &name);
        assert_eq!(result.is_err(), name.starts_with("incomplete"), "{name}: {result:?}");
        if let Ok(cfg) = result {
            assert_eq!(parse_config_str(&cfg.to_toml(), &name).unwrap(), cfg);
        }
        seen += 1;
    }
    assert!(seen >= 3);
}
