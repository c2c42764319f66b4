//! Rewrites the bundled selftest fixtures under `crates/core/fixtures`.

use std::path::Path;

fn main() -> std::io::Result<()> {
    let dir = Path::new(env!("CARGO_MANIFEST_DIR")).join("fixtures");
    std::fs::create_dir_all(&dir)?;
    let f = newsrl::selftest::generate_fixtures();
    std::fs::write(dir.join("bars.csv"), f.bars_csv)?;
    std::fs::write(dir.join("news.jsonl"), f.news_jsonl)?;
    std::fs::write(dir.join("responses.jsonl"), f.responses_jsonl)?;
    println!("fixtures written to {}", dir.display());
    Ok(())
}
