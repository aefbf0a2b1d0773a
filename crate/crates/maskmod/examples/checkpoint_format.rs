//! A tour of the binary checkpoint container: layout, bit-packed masks,
//! and the trailing content digest that catches any corruption.

use maskmod::mask::BinaryMask;
use maskmod::registry::checkpoint::{deserialize, serialize, Entry, KIND_TASK};

fn main() -> maskmod::Result<()> {
    let mask = BinaryMask::from_bools(
        vec![9],
        &[true, false, true, true, false, false, true, true, true],
    )?;
    let entries = [
        Entry::f32("conv1.k0", vec![], vec![1.0]),
        Entry::f32("conv1.k1", vec![], vec![0.25]),
        Entry::bits("conv1.mask", mask),
    ];
    let bytes = serialize(KIND_TASK, "{\"demo\":true}", &entries);

    println!("container: {} bytes total", bytes.len());
    println!("  magic    {:?}", std::str::from_utf8(&bytes[..4]).unwrap());
    println!("  version  {}", u16::from_le_bytes([bytes[4], bytes[5]]));
    println!("  kind     {}", bytes[6]);
    println!("  digest   {}", hex(&bytes[bytes.len() - 32..]));

    let (_, desc, parsed) = deserialize(&bytes, Some(KIND_TASK))?;
    println!("  desc     {desc}");
    for e in &parsed {
        println!(
            "  entry    {:<12} shape {:?} payload {} bytes",
            e.name,
            e.shape(),
            e.payload_bytes()
        );
    }
    // A 9-bit mask occupies two bytes: LSB-first, zero-padded.

    let mut corrupted = bytes.clone();
    // The mask payload is the last two bytes before the digest.
    let idx = bytes.len() - 33;
    corrupted[idx] ^= 0x01;
    match deserialize(&corrupted, Some(KIND_TASK)) {
        Err(err) => println!("\nflipping one payload bit -> {err}"),
        Ok(_) => println!("\nunexpected: corruption not detected"),
    }
    Ok(())
}

fn hex(bytes: &[u8]) -> String {
    bytes.iter().map(|b| format!("{b:02x}")).collect()
}
