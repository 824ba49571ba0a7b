//! Writes a hash-chained log to disk, then damages it.

use nodeguard::logger::{self, Category, ChainStatus, Logger};

fn main() {
    let dir = tempdir();
    let path = dir.join("gateway.log");
    let mut log = Logger::create(&path).unwrap();
    for i in 0..10u64 {
        log.log_append(
            i * 1_000,
            Category::DataProvenance,
            format!("node=n1 cell#{i} len=16"),
        );
    }
    println!("head {}", log.head().head);
    assert_eq!(logger::verify_log_file(&path).unwrap(), ChainStatus::Ok);

    let mut bytes = std::fs::read(&path).unwrap();
    let len = bytes.len();
    bytes[len / 2] ^= 1;
    std::fs::write(&path, &bytes).unwrap();
    println!("after edit: {:?}", logger::verify_log_file(&path).unwrap());

    log.save(&path).unwrap();
    let cut = std::fs::read(&path).unwrap();
    std::fs::write(&path, &cut[..cut.len() - 10]).unwrap();
    println!("after truncation: {:?}", logger::verify_log_file(&path).unwrap());
    let _ = std::fs::remove_dir_all(dir);
}

fn tempdir() -> std::path::PathBuf {
    let p = std::env::temp_dir().join(format!("nodeguard-log-{}", std::process::id()));
    std::fs::create_dir_all(&p).unwrap();
    p
}
