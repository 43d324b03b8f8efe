use std::fmt;

/// Progress notifications emitted while an analysis runs. `Display` renders
/// one machine-parsable `event=... key=value` line.
#[derive(Debug, Clone, PartialEq)]
pub enum ProgressEvent {
    InputsLoaded { layers: usize, samples: usize, concepts: usize, dropped_concepts: usize },
    LayerBinned { layer: u32, neurons: usize, bins: usize },
    ObservedScored { pairs: usize },
    Permutations { done: usize, total: usize },
    Finished { pairs: usize, significant: usize, wall_clock_ms: u64 },
}

impl fmt::Display for ProgressEvent {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            ProgressEvent::InputsLoaded { layers, samples, concepts, dropped_concepts } => write!(
                f,
                "event=inputs_loaded layers={layers} samples={samples} concepts={concepts} dropped_concepts={dropped_concepts}"
            ),
            ProgressEvent::LayerBinned { layer, neurons, bins } => {
                write!(f, "event=layer_binned layer={layer} neurons={neurons} bins={bins}")
            }
            ProgressEvent::ObservedScored { pairs } => write!(f, "event=observed_scored pairs={pairs}"),
            ProgressEvent::Permutations { done, total } => {
                write!(f, "event=permutations done={done} total={total}")
            }
            ProgressEvent::Finished { pairs, significant, wall_clock_ms } => write!(
                f,
                "event=finished pairs={pairs} significant={significant} wall_clock_ms={wall_clock_ms}"
            ),
        }
    }
}

/// Receives progress events; may be called from worker threads.
pub trait Progress: Sync {
    fn report(&self, event: ProgressEvent);
}

impl<F: Fn(ProgressEvent) + Sync> Progress for F {
    fn report(&self, event: ProgressEvent) {
        self(event)
    }
}

/// Discards all events.
pub struct Silent;

impl Progress for Silent {
    fn report(&self, _event: ProgressEvent) {}
}
