/**
 * The channel view model. Everything rendered comes out of this state,
 * and this state comes only from server responses (feeds, stream,
 * config, command/ack responses) - nothing is fabricated client-side.
 */

import type { AlertEvent, AlertRuleBounds, ChannelMeta, FeedsDocument } from "./api.js";

export const FIELD_KEYS = [
  "field1", "field2", "field3", "field4", "field5", "field6", "field7",
] as const;

export const FIELD_TITLES: Record<string, string> = {
  field1: "Air °C",
  field2: "Humidity %",
  field3: "Pulse bpm",
  field4: "Gas ADC",
  field5: "Light lux",
  field6: "Skin °C",
  field7: "Heater duty",
};

export interface FeedPoint {
  entryId: number;
  createdAt: string;
  /** numeric view of the served strings; null when absent/unparsable */
  values: Record<string, number | null>;
}

export interface AlertRow {
  alertId: number;
  label: string;
  state: AlertEvent["state"];
  field: string;
  value: number;
  ts: string;
  severity: AlertEvent["severity"];
  ackError?: string;
}

export interface PendingCommand {
  commandId: number;
  body: string;
  sentAtEntry: number; // latest entry_id when the command was sent
  status: "sent" | "delivered" | "timeout";
}

export interface ChannelView {
  channelId: number;
  channelName: string;
  points: FeedPoint[];
  rules: AlertRuleBounds[];
  fieldNames: (string | null)[];
  alerts: AlertRow[]; // newest first
  streamStatus: "connecting" | "open" | "down" | "denied";
  lastPollOk: string | null; // wall-clock ISO of the last good poll
  pollFailing: boolean;
  pending: PendingCommand | null;
  formErrors: Record<string, string>;
  notice: string | null;
}

export const ROLLING_WINDOW = 600;

export function createView(channelId: number): ChannelView {
  return {
    channelId,
    channelName: "",
    points: [],
    rules: [],
    fieldNames: [],
    alerts: [],
    streamStatus: "connecting",
    lastPollOk: null,
    pollFailing: false,
    pending: null,
    formErrors: {},
    notice: null,
  };
}

export function applyChannelMeta(view: ChannelView, meta: ChannelMeta): void {
  view.channelName = meta.name;
  view.rules = meta.alert_rules;
  view.fieldNames = meta.field_names;
}

export function applyFeeds(view: ChannelView, doc: FeedsDocument, nowIso: string): void {
  view.channelName = view.channelName || doc.channel.name;
  view.points = doc.feeds.map((record) => {
    const values: Record<string, number | null> = {};
    for (const key of FIELD_KEYS) {
      const raw = record[key];
      if (raw === null || raw === undefined) {
        values[key] = null;
      } else {
        const parsed = Number(raw);
        values[key] = Number.isFinite(parsed) ? parsed : null;
      }
    }
    return { entryId: record.entry_id, createdAt: record.created_at, values };
  });
  if (view.points.length > ROLLING_WINDOW) {
    view.points = view.points.slice(-ROLLING_WINDOW);
  }
  view.lastPollOk = nowIso;
  view.pollFailing = false;
  updatePendingDelivery(view);
}

export function applyPollFailure(view: ChannelView): void {
  view.pollFailing = true;
}

export function applyAlertEvent(view: ChannelView, event: AlertEvent): void {
  const row: AlertRow = {
    alertId: event.alert_id,
    label: event.label,
    state: event.state,
    field: event.field,
    value: event.value,
    ts: event.ts,
    severity: event.severity,
  };
  const existing = view.alerts.findIndex((a) => a.alertId === event.alert_id);
  if (existing >= 0) {
    view.alerts[existing] = { ...view.alerts[existing], ...row, ackError: undefined };
  } else {
    view.alerts.unshift(row);
  }
  view.alerts.sort((a, b) => b.alertId - a.alertId);
  if (view.alerts.length > 50) view.alerts.length = 50;
}

export function applyAckResult(view: ChannelView, alertId: number, state: string | null, error?: string): void {
  const row = view.alerts.find((a) => a.alertId === alertId);
  if (!row) return;
  if (state !== null) {
    row.state = state as AlertRow["state"];
    row.ackError = undefined;
  } else if (error) {
    row.ackError = error; // 404/409 surfaced inline; stream will refresh truth
  }
}

export function openAlerts(view: ChannelView): AlertRow[] {
  return view.alerts.filter((a) => a.state === "ACTIVE" || a.state === "ACKNOWLEDGED");
}

export function applyCommandAccepted(view: ChannelView, commandId: number, body: string): void {
  const lastEntry = view.points.length > 0 ? view.points[view.points.length - 1].entryId : 0;
  view.pending = { commandId, body, sentAtEntry: lastEntry, status: "sent" };
  view.notice = null;
}

export const COMMAND_DELIVERY_TIMEOUT_ENTRIES = 60;

/**
 * A setpoint command counts as delivered once post-send telemetry shows
 * heater behavior consistent with the new config: duty pegged high when
 * the new setpoint is above the served temperature, or pegged low when
 * below. Other commands (servo/mode flips alone) fall back to a timeout
 * measured in observed entries.
 */
export function updatePendingDelivery(view: ChannelView): void {
  const pending = view.pending;
  if (!pending || pending.status !== "sent") return;
  const after = view.points.filter((p) => p.entryId > pending.sentAtEntry);
  if (after.length === 0) return;

  const setpointMatch = /(?:^|&)setpoint=([0-9.+-]+)/.exec(pending.body);
  const servoMatch = /(?:^|&)servo=(air|skin)/.exec(pending.body);
  if (setpointMatch) {
    const setpoint = Number(setpointMatch[1]);
    const servoField = servoMatch && servoMatch[1] === "skin" ? "field6" : "field1";
    for (const point of after) {
      const measured = point.values[servoField];
      const duty = point.values.field7;
      if (measured === null || duty === null) continue;
      if (measured < setpoint - 0.5 && duty === 1.0) {
        pending.status = "delivered";
        return;
      }
      if (measured > setpoint + 0.5 && duty === 0.0) {
        pending.status = "delivered";
        return;
      }
    }
  }
  if (after.length >= COMMAND_DELIVERY_TIMEOUT_ENTRIES) {
    pending.status = "timeout";
  }
}

/** Bounds for a charted field, straight from the served rule set. */
export function boundsFor(view: ChannelView, field: string): { lower: number | null; upper: number | null } | null {
  const rule = view.rules.find((r) => r.field === field);
  if (!rule) return null;
  return { lower: rule.lower, upper: rule.upper };
}
