/**
 * Typed client for the telemetry service. The dashboard only ever
 * touches the documented endpoints: feeds.json, alerts/stream, commands,
 * the ack endpoint and config.json. Client-side command validation
 * mirrors the server's ranges so bad input dies before the POST.
 */

export interface FeedRecord {
  created_at: string;
  entry_id: number;
  field1: string | null;
  field2: string | null;
  field3: string | null;
  field4: string | null;
  field5: string | null;
  field6: string | null;
  field7: string | null;
  field8: string | null;
}

export interface FeedsDocument {
  channel: { id: number; name: string; created_at: string };
  feeds: FeedRecord[];
}

export interface AlertRuleBounds {
  field: string;
  lower: number | null;
  upper: number | null;
  debounce_n: number;
  clear_n: number;
  severity: "warning" | "critical";
  label: string;
}

export interface ChannelMeta {
  channel_id: number;
  name: string;
  created_at: string;
  min_update_interval_s: number;
  field_names: (string | null)[];
  alert_rules: AlertRuleBounds[];
}

export interface AlertEvent {
  alert_id: number;
  channel_id: number;
  label: string;
  state: "ACTIVE" | "ACKNOWLEDGED" | "RESOLVED";
  field: string;
  value: number;
  ts: string;
  severity: "warning" | "critical";
}

export interface AckResponse {
  alert_id: number;
  state: string;
  acked_by: string | null;
  [key: string]: unknown;
}

export class ApiError extends Error {
  constructor(public status: number, message: string) {
    super(message);
  }
}

export interface CommandForm {
  setpoint?: number;
  servo?: "air" | "skin";
  mode?: "onoff" | "pid";
  hum_setpoint?: number;
}

export const SETPOINT_RANGE: [number, number] = [20, 40];
export const HUM_SETPOINT_RANGE: [number, number] = [20, 80];

/** Mirror of the server's command validation; returns field -> problem. */
export function validateCommandForm(form: CommandForm): Record<string, string> {
  const errors: Record<string, string> = {};
  if (form.setpoint !== undefined) {
    if (!Number.isFinite(form.setpoint) || form.setpoint < SETPOINT_RANGE[0] || form.setpoint > SETPOINT_RANGE[1]) {
      errors.setpoint = `setpoint must be within ${SETPOINT_RANGE[0]}–${SETPOINT_RANGE[1]} °C`;
    }
  }
  if (form.hum_setpoint !== undefined) {
    if (
      !Number.isFinite(form.hum_setpoint) ||
      form.hum_setpoint < HUM_SETPOINT_RANGE[0] ||
      form.hum_setpoint > HUM_SETPOINT_RANGE[1]
    ) {
      errors.hum_setpoint = `humidity setpoint must be within ${HUM_SETPOINT_RANGE[0]}–${HUM_SETPOINT_RANGE[1]} %`;
    }
  }
  if (form.servo !== undefined && form.servo !== "air" && form.servo !== "skin") {
    errors.servo = "servo must be air or skin";
  }
  if (form.mode !== undefined && form.mode !== "onoff" && form.mode !== "pid") {
    errors.mode = "mode must be onoff or pid";
  }
  if (
    form.setpoint === undefined &&
    form.hum_setpoint === undefined &&
    form.servo === undefined &&
    form.mode === undefined
  ) {
    errors.form = "nothing to send";
  }
  return errors;
}

/** Serialize a command the way the device expects it: key=value&... */
export function buildCommandBody(form: CommandForm): string {
  const parts: string[] = [];
  if (form.setpoint !== undefined) parts.push(`setpoint=${form.setpoint}`);
  if (form.servo !== undefined) parts.push(`servo=${form.servo}`);
  if (form.mode !== undefined) parts.push(`mode=${form.mode}`);
  if (form.hum_setpoint !== undefined) parts.push(`hum_setpoint=${form.hum_setpoint}`);
  return parts.join("&");
}

export class TelemetryApi {
  constructor(
    public baseUrl: string,
    public channelId: number,
    public readKey: string,
    public writeKey: string | null = null,
  ) {}

  private channelPath(suffix: string): string {
    return `${this.baseUrl}/channels/${this.channelId}/${suffix}`;
  }

  async fetchFeeds(results = 200): Promise<FeedsDocument> {
    const url = this.channelPath(`feeds.json?api_key=${this.readKey}&results=${results}`);
    const response = await fetch(url);
    if (!response.ok) throw new ApiError(response.status, await response.text());
    return (await response.json()) as FeedsDocument;
  }

  async fetchChannelMeta(): Promise<ChannelMeta> {
    const response = await fetch(this.channelPath(`config.json?api_key=${this.readKey}`));
    if (!response.ok) throw new ApiError(response.status, await response.text());
    return (await response.json()) as ChannelMeta;
  }

  async postCommand(form: CommandForm): Promise<number> {
    const errors = validateCommandForm(form);
    if (Object.keys(errors).length > 0) {
      throw new ApiError(0, Object.values(errors).join("; "));
    }
    const key = this.writeKey;
    if (!key) throw new ApiError(0, "no write key configured");
    const response = await fetch(this.channelPath(`commands?api_key=${key}`), {
      method: "POST",
      body: buildCommandBody(form),
    });
    const text = await response.text();
    if (!response.ok) throw new ApiError(response.status, text);
    return parseInt(text, 10);
  }

  async ackAlert(alertId: number, who: string): Promise<AckResponse> {
    const response = await fetch(this.channelPath(`alerts/${alertId}/ack?api_key=${this.readKey}`), {
      method: "POST",
      body: `who=${encodeURIComponent(who)}`,
    });
    const text = await response.text();
    if (!response.ok) throw new ApiError(response.status, text);
    return JSON.parse(text) as AckResponse;
  }

  /**
   * Subscribe to the alert stream. Implemented over fetch + stream
   * parsing (not EventSource) so the very same code runs in the browser
   * and under node-based tests; reconnects with the server replaying
   * open alerts per the stream contract.
   */
  subscribeAlerts(
    onEvent: (event: AlertEvent) => void,
    onStatus: (status: "open" | "down" | "denied") => void,
    retryMs = 1000,
  ): () => void {
    let stopped = false;
    let controller: AbortController | null = null;

    const pump = async () => {
      while (!stopped) {
        controller = new AbortController();
        try {
          const response = await fetch(this.channelPath(`alerts/stream?api_key=${this.readKey}`), {
            signal: controller.signal,
          });
          if (response.status === 401 || response.status === 404) {
            onStatus("denied");
            return;
          }
          if (!response.ok || !response.body) throw new Error(`stream status ${response.status}`);
          onStatus("open");
          await consumeSseStream(response.body, (eventName, data) => {
            if (eventName === "alert") onEvent(JSON.parse(data) as AlertEvent);
          });
          throw new Error("stream ended");
        } catch (err) {
          if (stopped) return;
          onStatus("down");
          await new Promise((resolve) => setTimeout(resolve, retryMs));
        }
      }
    };
    void pump();
    return () => {
      stopped = true;
      controller?.abort();
    };
  }
}

/** Parse an SSE byte stream, invoking the callback per complete event. */
export async function consumeSseStream(
  body: ReadableStream<Uint8Array>,
  onEvent: (eventName: string, data: string) => void,
): Promise<void> {
  const reader = body.getReader();
  const decoder = new TextDecoder();
  let buffer = "";
  let eventName = "message";
  let data: string[] = [];
  for (;;) {
    const { done, value } = await reader.read();
    if (done) return;
    buffer += decoder.decode(value, { stream: true });
    let idx: number;
    while ((idx = buffer.indexOf("\n")) >= 0) {
      const line = buffer.slice(0, idx).replace(/\r$/, "");
      buffer = buffer.slice(idx + 1);
      if (line === "") {
        if (data.length > 0) onEvent(eventName, data.join("\n"));
        eventName = "message";
        data = [];
      } else if (line.startsWith(":")) {
        // keepalive comment
      } else if (line.startsWith("event:")) {
        eventName = line.slice(6).trim();
      } else if (line.startsWith("data:")) {
        data.push(line.slice(5).replace(/^ /, ""));
      }
    }
  }
}
