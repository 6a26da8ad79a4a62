//! One operator session: a latest-command mailbox shared with the network
//! side, and the simulation it feeds once per tick.

use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::Mutex;

use acc_sim::{Scenario, SimLog, Simulation, TickRecord};

use crate::protocol::{
    parse_command, tree_outline, CommandMessage, ProtocolError, SessionInfo, StateMessage,
    PROTOCOL_VERSION,
};

/// Single-slot, last-writer-wins command mailbox.
#[derive(Debug, Default)]
pub struct Mailbox {
    slot: Mutex<Option<CommandMessage>>,
    dropped: AtomicU64,
}

impl Mailbox {
    pub fn post(&self, cmd: CommandMessage) {
        *self.slot.lock().expect("mailbox lock") = Some(cmd);
    }

    pub fn take(&self) -> Option<CommandMessage> {
        self.slot.lock().expect("mailbox lock").take()
    }

    /// Parses a text frame and posts it. Malformed frames are counted and
    /// otherwise ignored.
    pub fn ingest(&self, text: &str) -> Result<CommandMessage, ProtocolError> {
        match parse_command(text) {
            Ok(cmd) => {
                self.post(cmd);
                Ok(cmd)
            }
            Err(e) => {
                self.reject();
                Err(e)
            }
        }
    }

    pub fn reject(&self) {
        self.dropped.fetch_add(1, Ordering::Relaxed);
    }

    pub fn dropped(&self) -> u64 {
        self.dropped.load(Ordering::Relaxed)
    }
}

pub struct Session {
    id: u64,
    sim: Simulation,
    mailbox: std::sync::Arc<Mailbox>,
    seq: u64,
    skipped: u64,
    log: SimLog,
    last: Option<StateMessage>,
}

impl Session {
    pub fn new(id: u64, scenario: Scenario) -> acc_sim::Result<Self> {
        Ok(Self {
            id,
            sim: Simulation::new(scenario)?,
            mailbox: Default::default(),
            seq: 0,
            skipped: 0,
            log: SimLog::default(),
            last: None,
        })
    }

    pub fn id(&self) -> u64 {
        self.id
    }

    pub fn mailbox(&self) -> std::sync::Arc<Mailbox> {
        self.mailbox.clone()
    }

    pub fn simulation(&self) -> &Simulation {
        &self.sim
    }

    pub fn log(&self) -> &SimLog {
        &self.log
    }

    pub fn info(&self) -> SessionInfo {
        SessionInfo::new(self.id, self.sim.scenario())
    }

    /// True while no fresh command is held by the watchdog.
    pub fn failsafe_engaged(&self) -> bool {
        self.sim.watchdog().is_stale(self.sim.now())
    }

    /// Records ticks the loop could not run on time.
    pub fn record_skips(&mut self, n: u64) {
        self.skipped += n;
    }

    pub fn skipped_ticks(&self) -> u64 {
        self.skipped
    }

    /// Applies the newest mailbox command, runs the controller and one plant
    /// step, and returns the state message for this tick.
    pub fn tick(&mut self) -> StateMessage {
        if let Some(cmd) = self.mailbox.take() {
            self.sim.receive(cmd.steering, cmd.velocity);
        }
        let seq = self.seq;
        self.seq += 1;
        match self.sim.step_external() {
            Ok(rec) => {
                let msg = self.message(seq, &rec);
                self.log.rows.push(rec.row);
                self.last = Some(msg.clone());
                msg
            }
            Err(e) => {
                tracing::warn!(session = self.id, error = %e, "tick failed");
                let mut msg = self.last.clone().unwrap_or_else(|| self.idle_message());
                msg.seq = seq;
                msg.degraded = true;
                msg.skipped_ticks = self.skipped;
                msg.dropped_messages = self.mailbox.dropped();
                msg
            }
        }
    }

    fn message(&self, seq: u64, rec: &TickRecord) -> StateMessage {
        let r = &rec.row;
        StateMessage {
            version: PROTOCOL_VERSION,
            seq,
            t: r.t,
            x: r.x,
            y: r.y,
            theta: r.theta,
            delta: r.delta,
            v: r.v,
            a: r.a,
            delta_des: r.delta_des,
            v_des: r.v_des,
            v_cmd: r.v_cmd,
            s_safe: r.s_safe,
            override_active: r.override_active,
            failsafe: r.failsafe,
            degraded: false,
            status: r.status.clone(),
            compute_ms: rec.output.compute_time.as_secs_f64() * 1e3,
            clearance: r.clearance.is_finite().then_some(r.clearance),
            skipped_ticks: self.skipped,
            dropped_messages: self.mailbox.dropped(),
            tree: rec.output.tree.as_ref().map(tree_outline).unwrap_or_default(),
        }
    }

    fn idle_message(&self) -> StateMessage {
        let z = self.sim.state();
        StateMessage {
            version: PROTOCOL_VERSION,
            seq: 0,
            t: self.sim.time(),
            x: z.x,
            y: z.y,
            theta: z.theta,
            delta: z.delta,
            v: z.v,
            a: self.sim.measured_accel(),
            delta_des: 0.0,
            v_des: 0.0,
            v_cmd: 0.0,
            s_safe: 0.0,
            override_active: false,
            failsafe: true,
            degraded: true,
            status: "failed".into(),
            compute_ms: 0.0,
            clearance: None,
            skipped_ticks: self.skipped,
            dropped_messages: self.mailbox.dropped(),
            tree: Vec::new(),
        }
    }
}
