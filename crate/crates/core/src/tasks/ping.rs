//! ICMP echo without an external `ping` binary. Tries an unprivileged
//! datagram ICMP socket first and falls back to a raw socket.

use std::io::{self, Read};
use std::net::{IpAddr, Ipv4Addr, SocketAddr, SocketAddrV4, ToSocketAddrs};
use std::time::{Duration, Instant};

use async_trait::async_trait;
use serde::{Deserialize, Serialize};
use socket2::{Domain, Protocol, SockAddr, Socket, Type};

use super::{f64_param, i64_param, str_param, TaskFailure, TaskImplementation, TaskOutput};
use crate::executor::TaskContext;
use crate::model::Params;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PingSummary {
    pub target: String,
    pub address: String,
    pub transmitted: u32,
    pub received: u32,
    pub loss_pct: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub rtt_min_ms: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub rtt_avg_ms: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub rtt_max_ms: Option<f64>,
}

impl PingSummary {
    pub(crate) fn from_rtts(target: &str, address: &str, transmitted: u32, rtts: &[f64]) -> Self {
        let received = rtts.len() as u32;
        let loss_pct = if transmitted == 0 { 0.0 } else { 100.0 * f64::from(transmitted - received) / f64::from(transmitted) };
        let (min, avg, max) = if rtts.is_empty() {
            (None, None, None)
        } else {
            let min = rtts.iter().copied().fold(f64::INFINITY, f64::min);
            let max = rtts.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            (Some(min), Some(rtts.iter().sum::<f64>() / rtts.len() as f64), Some(max))
        };
        Self {
            target: target.to_string(),
            address: address.to_string(),
            transmitted,
            received,
            loss_pct,
            rtt_min_ms: min,
            rtt_avg_ms: avg,
            rtt_max_ms: max,
        }
    }
}

fn ping_params(params: &Params) -> Result<(String, u32, f64, f64), TaskFailure> {
    let target = str_param(params, "target")?.to_string();
    let count = i64_param(params, "count", Some(4))?;
    if count < 1 {
        return Err(TaskFailure::new(format!("count must be >= 1, got {count}")));
    }
    let interval = f64_param(params, "interval_s", Some(1.0))?.max(0.0);
    let wait = f64_param(params, "wait_s", Some(1.0))?.max(0.001);
    Ok((target, count as u32, interval, wait))
}

pub(crate) fn icmp_checksum(data: &[u8]) -> u16 {
    let mut sum: u32 = 0;
    for chunk in data.chunks(2) {
        let word = if chunk.len() == 2 { u16::from_be_bytes([chunk[0], chunk[1]]) } else { u16::from(chunk[0]) << 8 };
        sum += u32::from(word);
    }
    while sum >> 16 != 0 {
        sum = (sum & 0xffff) + (sum >> 16);
    }
    !(sum as u16)
}

fn echo_request(ident: u16, seq: u16, nonce: u64) -> Vec<u8> {
    let mut pkt = vec![8u8, 0, 0, 0];
    pkt.extend_from_slice(&ident.to_be_bytes());
    pkt.extend_from_slice(&seq.to_be_bytes());
    pkt.extend_from_slice(&nonce.to_be_bytes());
    pkt.extend_from_slice(b"expforge");
    let c = icmp_checksum(&pkt);
    pkt[2..4].copy_from_slice(&c.to_be_bytes());
    pkt
}

struct Probe {
    socket: Socket,
    raw: bool,
}

fn open_socket() -> io::Result<Probe> {
    match Socket::new(Domain::IPV4, Type::DGRAM, Some(Protocol::ICMPV4)) {
        Ok(socket) => Ok(Probe { socket, raw: false }),
        Err(_) => Ok(Probe { socket: Socket::new(Domain::IPV4, Type::RAW, Some(Protocol::ICMPV4))?, raw: true }),
    }
}

/// Returns the sequence number if `buf` is the echo reply to our probe.
fn match_reply(buf: &[u8], raw: bool, from: Ipv4Addr, nonce: u64) -> Option<u16> {
    let icmp = if raw {
        let ihl = usize::from(buf.first()? & 0x0f) * 4;
        if buf.len() < ihl + 16 || Ipv4Addr::new(buf[12], buf[13], buf[14], buf[15]) != from {
            return None;
        }
        &buf[ihl..]
    } else {
        buf
    };
    if icmp.len() < 16 || icmp[0] != 0 {
        return None;
    }
    if u64::from_be_bytes(icmp[8..16].try_into().ok()?) != nonce {
        return None;
    }
    Some(u16::from_be_bytes([icmp[6], icmp[7]]))
}

fn ping_blocking(addr: Ipv4Addr, count: u32, interval: Duration, wait: Duration) -> io::Result<Vec<f64>> {
    let probe = open_socket()?;
    let nonce: u64 = rand::random();
    let ident = (nonce & 0xffff) as u16;
    let dest = SockAddr::from(SocketAddr::V4(SocketAddrV4::new(addr, 0)));
    let mut rtts = Vec::new();
    let mut sock = &probe.socket;
    let mut buf = [0u8; 1500];
    for seq in 0..count {
        if seq > 0 {
            std::thread::sleep(interval);
        }
        let seq = seq as u16;
        let sent = Instant::now();
        sock.send_to(&echo_request(ident, seq, nonce), &dest)?;
        let deadline = sent + wait;
        loop {
            let now = Instant::now();
            if now >= deadline {
                break;
            }
            sock.set_read_timeout(Some(deadline - now))?;
            match sock.read(&mut buf) {
                Ok(n) => {
                    if match_reply(&buf[..n], probe.raw, addr, nonce) == Some(seq) {
                        rtts.push(sent.elapsed().as_secs_f64() * 1000.0);
                        break;
                    }
                }
                Err(e) if matches!(e.kind(), io::ErrorKind::WouldBlock | io::ErrorKind::TimedOut) => break,
                Err(e) if e.kind() == io::ErrorKind::Interrupted => {}
                Err(e) => return Err(e),
            }
        }
    }
    Ok(rtts)
}

fn resolve_v4(target: &str) -> Result<Ipv4Addr, TaskFailure> {
    if let Ok(ip) = target.parse::<IpAddr>() {
        return match ip {
            IpAddr::V4(v4) => Ok(v4),
            IpAddr::V6(_) => Err(TaskFailure::new("IPv6 targets are not supported")),
        };
    }
    (target, 0)
        .to_socket_addrs()
        .map_err(|e| TaskFailure::new(format!("cannot resolve `{target}`: {e}")))?
        .find_map(|a| match a.ip() {
            IpAddr::V4(v4) => Some(v4),
            IpAddr::V6(_) => None,
        })
        .ok_or_else(|| TaskFailure::new(format!("cannot resolve `{target}` to an IPv4 address")))
}

pub struct IcmpPing;

#[async_trait]
impl TaskImplementation for IcmpPing {
    fn id(&self) -> &str {
        "builtin.ping.icmp"
    }

    async fn run(&self, params: &Params, _ctx: &TaskContext) -> Result<TaskOutput, TaskFailure> {
        let (target, count, interval, wait) = ping_params(params)?;
        let t = target.clone();
        let addr = tokio::task::spawn_blocking(move || resolve_v4(&t))
            .await
            .map_err(|e| TaskFailure::new(e.to_string()))??;
        let rtts = tokio::task::spawn_blocking(move || {
            ping_blocking(addr, count, Duration::from_secs_f64(interval), Duration::from_secs_f64(wait))
        })
        .await
        .map_err(|e| TaskFailure::new(e.to_string()))?
        .map_err(|e| TaskFailure::new(format!("icmp socket: {e}")))?;
        let summary = PingSummary::from_rtts(&target, &addr.to_string(), count, &rtts);
        Ok(TaskOutput::json(serde_json::to_value(summary).expect("summary serializes")))
    }
}

/// Synthetic loss-free summary.
pub struct SimulatedPing;

#[async_trait]
impl TaskImplementation for SimulatedPing {
    fn id(&self) -> &str {
        "builtin.ping.sim"
    }

    async fn run(&self, params: &Params, _ctx: &TaskContext) -> Result<TaskOutput, TaskFailure> {
        let (target, count, _, _) = ping_params(params)?;
        let rtts = vec![1.0; count as usize];
        let summary = PingSummary::from_rtts(&target, &target, count, &rtts);
        Ok(TaskOutput::json(serde_json::to_value(summary).expect("summary serializes")))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn checksum_of_known_packet() {
        // Echo request id=1 seq=1 with no payload: 0x0800 + 0x0001 + 0x0001
        // = 0x0802, complement 0xf7fd.
        let pkt = [8u8, 0, 0, 0, 0, 1, 0, 1];
        assert_eq!(icmp_checksum(&pkt), 0xf7fd);
        let full = echo_request(1, 1, 42);
        assert_eq!(icmp_checksum(&full), 0);
    }

    #[test]
    fn summary_statistics() {
        let s = PingSummary::from_rtts("h", "1.2.3.4", 4, &[1.0, 3.0]);
        assert_eq!(s.loss_pct, 50.0);
        assert_eq!((s.rtt_min_ms, s.rtt_avg_ms, s.rtt_max_ms), (Some(1.0), Some(2.0), Some(3.0)));
        let none = PingSummary::from_rtts("h", "1.2.3.4", 2, &[]);
        assert_eq!(none.loss_pct, 100.0);
        assert!(none.rtt_avg_ms.is_none());
    }

    #[test]
    fn reply_matching() {
        let mut reply = echo_request(7, 3, 99);
        reply[0] = 0;
        assert_eq!(match_reply(&reply, false, Ipv4Addr::LOCALHOST, 99), Some(3));
        assert_eq!(match_reply(&reply, false, Ipv4Addr::LOCALHOST, 98), None);
        let mut ip = vec![0x45u8, 0, 0, 0, 0, 0, 0, 0, 64, 1, 0, 0, 127, 0, 0, 1, 127, 0, 0, 1];
        ip.extend_from_slice(&reply);
        assert_eq!(match_reply(&ip, true, Ipv4Addr::LOCALHOST, 99), Some(3));
        assert_eq!(match_reply(&ip, true, Ipv4Addr::new(10, 0, 0, 1), 99), None);
    }
}
