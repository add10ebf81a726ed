//! Checkpoint encoding: header, round trip and corruption detection.

use rfedit::net::{decode_checkpoint, encode_checkpoint, parameter_count, Net, NetConfig};

fn main() -> rfedit::Result<()> {
    let cfg = NetConfig::default();
    let net = Net::new(cfg.clone())?;
    let bytes = encode_checkpoint(&net)?;
    println!("{} parameters, {} bytes, magic {:?}", parameter_count(&cfg), bytes.len(), std::str::from_utf8(&bytes[..4]).unwrap_or("?"));

    let back = decode_checkpoint(&bytes)?;
    println!("round trip identical: {}", back.params() == net.params());

    let mut bad = bytes.clone();
    let mid = bad.len() / 2;
    bad[mid] ^= 1;
    match decode_checkpoint(&bad) {
        Ok(_) => println!("corruption went unnoticed"),
        Err(e) => println!("flipped one bit: {e}"),
    }
    Ok(())
}
