//! Writes a synthetic speech-like corpus.
//!
//! Usage: make_corpus <dir> [files] [seconds_per_file] [seed]

fn main() -> nsc_core::Result<()> {
    let mut args = std::env::args().skip(1);
    let dir = args.next().expect("usage: make_corpus <dir> [files] [seconds] [seed]");
    let files = args.next().map_or(64, |s| s.parse().expect("file count"));
    let seconds = args.next().map_or(5.0, |s| s.parse().expect("seconds"));
    let seed = args.next().map_or(42, |s| s.parse().expect("seed"));
    let written = nsc_core::fixture::write_corpus(&dir, files, seconds, seed)?;
    println!("wrote {} files to {dir}", written.len());
    Ok(())
}
