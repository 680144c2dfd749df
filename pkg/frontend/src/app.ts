/**
 * Dashboard page wiring. Configuration comes from query parameters:
 *   /?channel=1&api_key=<read key>[&write_key=<write key>][&server=http://...]
 * Feeds poll every 2 s; alerts ride the SSE stream with reconnect (the
 * server replays open alerts on connect, so a drop loses nothing).
 */

import { ApiError, TelemetryApi, buildCommandBody, validateCommandForm, type CommandForm } from "./api.js";
import { sparkline } from "./charts.js";
import {
  FIELD_KEYS,
  FIELD_TITLES,
  applyAckResult,
  applyAlertEvent,
  applyChannelMeta,
  applyCommandAccepted,
  applyFeeds,
  applyPollFailure,
  boundsFor,
  createView,
  type ChannelView,
} from "./state.js";

const POLL_MS = 2000;

const params = new URLSearchParams(window.location.search);
const channelId = parseInt(params.get("channel") ?? "1", 10);
const readKey = params.get("api_key") ?? "";
const writeKey = params.get("write_key");
const baseUrl = params.get("server") ?? "";

const api = new TelemetryApi(baseUrl, channelId, readKey, writeKey);
const view = createView(channelId);
const root = document.getElementById("app")!;

function esc(text: string): string {
  return text.replace(/&/g, "&amp;").replace(/</g, "&lt;").replace(/>/g, "&gt;").replace(/"/g, "&quot;");
}

function latest(view: ChannelView, field: string): string {
  for (let i = view.points.length - 1; i >= 0; i--) {
    const value = view.points[i].values[field];
    if (value !== null) return String(value);
  }
  return "—";
}

function renderStaleBanner(): string {
  if (!view.pollFailing) return "";
  const seen = view.lastPollOk ? `last update ${esc(view.lastPollOk)}` : "no data received yet";
  return `<div class="banner stale">server unreachable — showing stale data (${seen})</div>`;
}

function renderAlertBanner(): string {
  const open = view.alerts.filter((a) => a.state === "ACTIVE");
  if (open.length === 0) return "";
  const worst = open.some((a) => a.severity === "critical") ? "critical" : "warning";
  return `<div class="banner alert-${worst}">${open.length} active alert${open.length > 1 ? "s" : ""}</div>`;
}

function renderVitals(): string {
  const cards = FIELD_KEYS.map((field, i) => {
    const name = view.fieldNames[i] || FIELD_TITLES[field];
    const series = view.points.map((p) => p.values[field]);
    const bounds = boundsFor(view, field);
    return `
      <div class="card">
        <div class="card-head"><span class="card-title">${esc(name)}</span>
        <span class="card-value">${latest(view, field)}</span></div>
        ${sparkline(series, bounds)}
      </div>`;
  });
  return `<section class="vitals">${cards.join("")}</section>`;
}

function renderAlerts(): string {
  if (view.alerts.length === 0) {
    return `<section class="alerts"><h2>Alerts</h2><p class="empty">no alerts</p></section>`;
  }
  const rows = view.alerts
    .map((alert) => {
      const ack =
        alert.state === "ACTIVE"
          ? `<button class="ack" data-alert="${alert.alertId}">acknowledge</button>`
          : "";
      const error = alert.ackError ? `<span class="ack-error">${esc(alert.ackError)}</span>` : "";
      return `<tr class="alert-row state-${alert.state.toLowerCase()} sev-${alert.severity}">
        <td>#${alert.alertId}</td><td>${esc(alert.label)}</td><td>${alert.state}</td>
        <td>${alert.value}</td><td>${esc(alert.ts)}</td><td>${alert.severity}</td><td>${ack}${error}</td>
      </tr>`;
    })
    .join("");
  return `<section class="alerts"><h2>Alerts</h2>
    <table><thead><tr><th>id</th><th>rule</th><th>state</th><th>value</th><th>at</th><th>severity</th><th></th></tr></thead>
    <tbody>${rows}</tbody></table></section>`;
}

function renderControl(): string {
  if (!writeKey) {
    return `<section class="control"><h2>Remote control</h2>
      <p class="empty">read-only view (add &write_key= to the URL to control)</p></section>`;
  }
  const pending = view.pending
    ? `<p class="pending ${view.pending.status}">command #${view.pending.commandId} (${esc(view.pending.body)}): ${view.pending.status}</p>`
    : "";
  const fieldError = (name: string) =>
    view.formErrors[name] ? `<span class="field-error">${esc(view.formErrors[name])}</span>` : "";
  return `<section class="control"><h2>Remote control</h2>
    <form id="command-form">
      <label>setpoint °C <input name="setpoint" type="number" step="0.1" placeholder="35.0">${fieldError("setpoint")}</label>
      <label>servo <select name="servo"><option value="">(keep)</option><option value="air">air</option><option value="skin">skin</option></select></label>
      <label>mode <select name="mode"><option value="">(keep)</option><option value="onoff">onoff</option><option value="pid">pid</option></select></label>
      <label>humidity % <input name="hum_setpoint" type="number" step="1" placeholder="55">${fieldError("hum_setpoint")}</label>
      <button type="submit">send</button>
      ${fieldError("form")}
    </form>${pending}</section>`;
}

function render(): void {
  const stream =
    view.streamStatus === "open"
      ? `<span class="dot live"></span>stream live`
      : view.streamStatus === "denied"
        ? `<span class="dot dead"></span>stream denied`
        : `<span class="dot dead"></span>stream ${view.streamStatus}`;
  root.innerHTML = `
    <header><h1>${esc(view.channelName || `channel ${view.channelId}`)}</h1>
      <span class="stream-status">${stream}</span></header>
    ${renderStaleBanner()}
    ${renderAlertBanner()}
    ${renderVitals()}
    ${renderAlerts()}
    ${renderControl()}
  `;
}

async function ack(alertId: number): Promise<void> {
  try {
    const result = await api.ackAlert(alertId, "dashboard");
    applyAckResult(view, alertId, result.state);
  } catch (err) {
    const message = err instanceof ApiError ? `${err.status}: ${err.message}` : String(err);
    applyAckResult(view, alertId, null, message);
  }
  render();
}

function readForm(form: HTMLFormElement): CommandForm {
  const data = new FormData(form);
  const out: CommandForm = {};
  const setpoint = String(data.get("setpoint") ?? "").trim();
  if (setpoint !== "") out.setpoint = Number(setpoint);
  const hum = String(data.get("hum_setpoint") ?? "").trim();
  if (hum !== "") out.hum_setpoint = Number(hum);
  const servo = String(data.get("servo") ?? "");
  if (servo) out.servo = servo as CommandForm["servo"];
  const mode = String(data.get("mode") ?? "");
  if (mode) out.mode = mode as CommandForm["mode"];
  return out;
}

async function submitCommand(form: HTMLFormElement): Promise<void> {
  const command = readForm(form);
  view.formErrors = validateCommandForm(command);
  if (Object.keys(view.formErrors).length > 0) {
    render();
    return;
  }
  try {
    const commandId = await api.postCommand(command);
    applyCommandAccepted(view, commandId, buildCommandBody(command));
  } catch (err) {
    view.formErrors = { form: err instanceof ApiError ? `${err.status}: ${err.message}` : String(err) };
  }
  render();
}

root.addEventListener("click", (event) => {
  const target = event.target as HTMLElement;
  if (target.matches("button.ack")) {
    void ack(parseInt(target.dataset.alert!, 10));
  }
});

root.addEventListener("submit", (event) => {
  const form = event.target as HTMLFormElement;
  if (form.id === "command-form") {
    event.preventDefault();
    void submitCommand(form);
  }
});

async function poll(): Promise<void> {
  try {
    const doc = await api.fetchFeeds();
    applyFeeds(view, doc, new Date().toISOString());
  } catch {
    applyPollFailure(view);
  }
  render();
}

async function boot(): Promise<void> {
  try {
    applyChannelMeta(view, await api.fetchChannelMeta());
  } catch {
    // metadata is cosmetic (names, band shading); polling continues
  }
  api.subscribeAlerts(
    (event) => {
      applyAlertEvent(view, event);
      render();
    },
    (status) => {
      view.streamStatus = status === "open" ? "open" : status === "denied" ? "denied" : "down";
      render();
    },
  );
  await poll();
  setInterval(() => void poll(), POLL_MS);
}

void boot();
