//! Shared shadow-copy fuzz harness for the memory state machine.

#![allow(dead_code)]

use hetgrad_core::device::{Backend, BufView, DeviceId, Runtime};
use hetgrad_core::memory::{Head, SyncedTensor, TransferStats};
use hetgrad_core::rng::Xoshiro256;

struct Shadow {
    values: Vec<f32>,
}

fn predicted_transfers(head: Head, op: &Op) -> (u64, u64) {
    // (device_to_host, host_to_device) the operation must perform.
    match (head, op) {
        (Head::Uninitialized, Op::ReadHost | Op::WriteHost(_)) => (0, 0),
        (Head::HostOnly | Head::Synced(_), Op::ReadHost | Op::WriteHost(_)) => (0, 0),
        (Head::DeviceOnly(_), Op::ReadHost | Op::WriteHost(_)) => (1, 0),
        (Head::Uninitialized, Op::ReadDevice(_) | Op::WriteDevice(_, _)) => (0, 0),
        (Head::HostOnly, Op::ReadDevice(_) | Op::WriteDevice(_, _)) => (0, 1),
        (Head::DeviceOnly(cur) | Head::Synced(cur), Op::ReadDevice(d) | Op::WriteDevice(d, _))
            if cur == *d =>
        {
            (0, 0)
        }
        (Head::Synced(_), Op::ReadDevice(_) | Op::WriteDevice(_, _)) => (0, 1),
        // Bound elsewhere: two hops through the host.
        (Head::DeviceOnly(_), Op::ReadDevice(_) | Op::WriteDevice(_, _)) => (1, 1),
    }
}

enum Op {
    ReadHost,
    WriteHost(u64),
    ReadDevice(DeviceId),
    /// Write staging plus a device-side scale launch.
    WriteDevice(DeviceId, f32),
}

/// Random op sequence against a host shadow;every  step checks values and the
/// predicted transfer-counter deltas.
pub fn shadow_fuzz(steps: usize) {
    let mut rt = Runtime::<f32>::new();
    let host = rt.register_host();
    let d1 = rt.register_device(Backend::EmulatedAccelerator, None).unwrap();
    let d2 = rt.register_device(Backend::EmulatedAccelerator, None).unwrap();
    let _ = host;

    let len = 24;
    let mut tensor = SyncedTensor::<f32>::from_dims(&[len]).unwrap();
    let mut shadow = Shadow { values: vec![0.0; len] };
    let mut rng = Xoshiro256::seed_from(4242);
    let scales = [0.5f32, -0.5, 1.0, -1.0, 1.5];

    for step in 0..steps {
        let op = match rng.below(4) {
            0 => Op::ReadHost,
            1 => Op::WriteHost(rng.next_u64()),
            2 => Op::ReadDevice(if rng.below(2) == 0 { d1 } else { d2 }),
            _ => Op::WriteDevice(
                if rng.below(2) == 0 { d1 } else { d2 },
                scales[rng.below(scales.len())],
            ),
        };
        let before = *tensor.stats();
        let (want_d2h, want_h2d) = predicted_transfers(tensor.head(), &op);

        match &op {
            Op::ReadHost => {
                let view = tensor.read_host(&mut rt).unwrap();
                assert_eq!(view, shadow.values.as_slice(), "divergence at step {}", step);
                assert!(matches!(tensor.head(), Head::HostOnly | Head::Synced(_)));
            }
            Op::WriteHost(seed) => {
                let mut vr = Xoshiro256::seed_from(*seed);
                let fresh: Vec<f32> = (0..len).map(|_| vr.uniform(-2.0, 2.0) as f32).collect();
                tensor.write_host(&mut rt).unwrap().copy_from_slice(&fresh);
                shadow.values.copy_from_slice(&fresh);
                assert_eq!(tensor.head(), Head::HostOnly);
            }
            Op::ReadDevice(d) => {
                tensor.read_device(&mut rt, *d).unwrap();
                assert!(matches!(tensor.head(), Head::DeviceOnly(_) | Head::Synced(_)));
            }
            Op::WriteDevice(d, alpha) => {
                let view = tensor.write_device(&mut rt, *d).unwrap();
                assert_eq!(tensor.head(), Head::DeviceOnly(*d));
                // Device-side mutation through a launch; the shadow applies
                // the same arithmetic.
                rt.launch(
                    *d,
                    "Scale",
                    &[
                        hetgrad_core::device::Arg::Scalar(*alpha as f64),
                        hetgrad_core::device::Arg::InOut(BufView::new(view.id, 0, len)),
                    ],
                )
                .unwrap();
                for v in &mut shadow.values {
                    *v *= alpha;
                }
            }
        }

        let after = *tensor.stats();
        assert_eq!(
            after.device_to_host_count - before.device_to_host_count,
            want_d2h,
            "step {}: d2h count",
            step
        );
        assert_eq!(
            after.host_to_device_count - before.host_to_device_count,
            want_h2d,
            "step {}: h2d count",
            step
        );
        // Byte counters move with the counts.
        assert_eq!(
            after.device_to_host_bytes - before.device_to_host_bytes,
            want_d2h * (len as u64) * 4
        );
        assert_eq!(
            after.host_to_device_bytes - before.host_to_device_bytes,
            want_h2d * (len as u64) * 4
        );
    }

    // Final read agrees exactly.
    let view = tensor.read_host(&mut rt).unwrap();
    assert_eq!(view, shadow.values.as_slice());
}

/// Reads on the side already holding the head perform zero transfers.
pub fn head_side_reads_are_free() {
    let mut rt = Runtime::<f32>::new();
    rt.register_host();
    let d = rt.register_device(Backend::EmulatedAccelerator, None).unwrap();
    let mut t = SyncedTensor::<f32>::from_dims(&[8]).unwrap();
    t.fill_from(&mut rt, &[1.0; 8]).unwrap();
    let mut prev = TransferStats::default();
    for _ in 0..50 {
        t.read_host(&mut rt).unwrap();
        let s = *t.stats();
        assert!(s.host_to_device_count >= prev.host_to_device_count);
        assert!(s.device_to_host_count >= prev.device_to_host_count);
        prev = s;
    }
    assert_eq!(prev.host_to_device_count, 0);
    t.read_device(&mut rt, d).unwrap();
    let after_upload = *t.stats();
    for _ in 0..50 {
        t.read_device(&mut rt, d).unwrap();
    }
    assert_eq!(*t.stats(), after_upload);
}
