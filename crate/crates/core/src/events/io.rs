//! EVT1 / CSV event files and VOL1 volume files. All binary fields are
//! little-endian.

use std::io::{BufRead, Read, Write};

use super::{Event, EventStream, EventVolume, Polarity};
use crate::error::{Error, Result};

const EVT_MAGIC: &[u8; 4] = b"EVT1";
const VOL_MAGIC: &[u8; 4] = b"VOL1";
const EVT_RECORD: usize = 16;

pub fn write_evt1<W: Write>(stream: &EventStream, mut w: W) -> Result<()> {
    let mut buf = Vec::with_capacity(20 + EVT_RECORD * stream.count());
    buf.extend_from_slice(EVT_MAGIC);
    buf.extend_from_slice(&(stream.width() as u32).to_le_bytes());
    buf.extend_from_slice(&(stream.height() as u32).to_le_bytes());
    buf.extend_from_slice(&(stream.count() as u64).to_le_bytes());
    for e in stream.events() {
        buf.extend_from_slice(&e.x.to_le_bytes());
        buf.extend_from_slice(&e.y.to_le_bytes());
        buf.extend_from_slice(&e.t.to_le_bytes());
        buf.push(e.p.as_i8() as u8);
        buf.extend_from_slice(&[0, 0, 0]);
    }
    w.write_all(&buf)?;
    Ok(())
}

pub fn read_evt1<R: Read>(mut r: R) -> Result<EventStream> {
    let mut buf = Vec::new();
    r.read_to_end(&mut buf)?;
    if buf.len() < 20 || &buf[..4] != EVT_MAGIC {
        return Err(Error::format("EVT1", "bad magic or short header"));
    }
    let width = u32::from_le_bytes(buf[4..8].try_into().unwrap()) as usize;
    let height = u32::from_le_bytes(buf[8..12].try_into().unwrap()) as usize;
    let count = u64::from_le_bytes(buf[12..20].try_into().unwrap());
    let body = &buf[20..];
    let expected = usize::try_from(count)
        .ok()
        .and_then(|c| c.checked_mul(EVT_RECORD))
        .ok_or_else(|| Error::format("EVT1", "event count overflows"))?;
    if body.len() != expected {
        return Err(Error::format(
            "EVT1",
            format!("header declares {count} events but payload holds {} bytes", body.len()),
        ));
    }
    let mut events = Vec::with_capacity(count as usize);
    for (i, rec) in body.chunks_exact(EVT_RECORD).enumerate() {
        let p = Polarity::from_i8(rec[12] as i8)
            .ok_or_else(|| Error::format("EVT1", format!("record {i} has polarity {}", rec[12] as i8)))?;
        events.push(Event {
            x: u16::from_le_bytes([rec[0], rec[1]]),
            y: u16::from_le_bytes([rec[2], rec[3]]),
            t: f64::from_le_bytes(rec[4..12].try_into().unwrap()),
            p,
        });
    }
    EventStream::new(width, height, events).map_err(|e| Error::format("EVT1", e.to_string()))
}

/// CSV has no geometry header, so it is supplied by the caller.
pub fn write_csv<W: Write>(stream: &EventStream, mut w: W) -> Result<()> {
    writeln!(w, "x,y,t,p")?;
    for e in stream.events() {
        // `{:?}` on f64 prints the shortest string that round-trips.
        writeln!(w, "{},{},{:?},{}", e.x, e.y, e.t, e.p.as_i8())?;
    }
    Ok(())
}

pub fn read_csv<R: BufRead>(r: R, width: usize, height: usize) -> Result<EventStream> {
    let mut lines = r.lines();
    match lines.next() {
        Some(Ok(h)) if h.trim() == "x,y,t,p" => {}
        _ => return Err(Error::format("CSV", "expected header x,y,t,p")),
    }
    let mut events = Vec::new();
    for (n, line) in lines.enumerate() {
        let line = line?;
        let line = line.trim();
        if line.is_empty() {
            continue;
        }
        let bad = || Error::format("CSV", format!("row {}: {line:?}", n + 2));
        let mut f = line.split(',');
        let (Some(x), Some(y), Some(t), Some(p), None) = (f.next(), f.next(), f.next(), f.next(), f.next()) else {
            return Err(bad());
        };
        let p: i8 = p.trim().parse().map_err(|_| bad())?;
        events.push(Event {
            x: x.trim().parse().map_err(|_| bad())?,
            y: y.trim().parse().map_err(|_| bad())?,
            t: t.trim().parse().map_err(|_| bad())?,
            p: Polarity::from_i8(p).ok_or_else(bad)?,
        });
    }
    EventStream::new(width, height, events).map_err(|e| Error::format("CSV", e.to_string()))
}

pub fn write_vol1<W: Write>(vol: &EventVolume, mut w: W) -> Result<()> {
    let mut buf = Vec::with_capacity(20 + 8 * vol.data.len());
    buf.extend_from_slice(VOL_MAGIC);
    for v in [vol.bins_pos, vol.bins_neg, vol.width, vol.height] {
        buf.extend_from_slice(&(v as u32).to_le_bytes());
    }
    for v in &vol.data {
        buf.extend_from_slice(&v.to_le_bytes());
    }
    w.write_all(&buf)?;
    Ok(())
}

pub fn read_vol1<R: Read>(mut r: R) -> Result<EventVolume> {
    let mut buf = Vec::new();
    r.read_to_end(&mut buf)?;
    if buf.len() < 20 || &buf[..4] != VOL_MAGIC {
        return Err(Error::format("VOL1", "bad magic or short header"));
    }
    let field = |i: usize| u32::from_le_bytes(buf[4 + 4 * i..8 + 4 * i].try_into().unwrap()) as usize;
    let (bins_pos, bins_neg, width, height) = (field(0), field(1), field(2), field(3));
    if bins_pos == 0 || bins_neg == 0 {
        return Err(Error::format("VOL1", "zero time bins"));
    }
    let n = (bins_pos + bins_neg)
        .checked_mul(width)
        .and_then(|v| v.checked_mul(height))
        .ok_or_else(|| Error::format("VOL1", "volume size overflows"))?;
    let body = &buf[20..];
    if body.len() != 8 * n {
        return Err(Error::format("VOL1", format!("expected {n} values, payload has {} bytes", body.len())));
    }
    let data = body
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
        .collect();
    Ok(EventVolume {
        bins_pos,
        bins_neg,
        width,
        height,
        data,
    })
}
