/**
 * Records the exact requests the dashboard can emit (command bodies, ack
 * bodies, query strings) into a JSON fixture. The service's test suite
 * replays the fixture and must see zero 400s for the valid entries.
 */

import { writeFileSync, mkdirSync } from "node:fs";
import { dirname } from "node:path";
import { buildCommandBody, validateCommandForm, type CommandForm } from "../src/api.js";

const valid: CommandForm[] = [
  { setpoint: 35.0 },
  { setpoint: 20 },
  { setpoint: 40 },
  { setpoint: 36.5, servo: "air" },
  { setpoint: 37, servo: "skin", mode: "onoff" },
  { mode: "pid" },
  { servo: "skin" },
  { hum_setpoint: 55 },
  { hum_setpoint: 20 },
  { hum_setpoint: 80 },
  { setpoint: 34.5, servo: "air", mode: "pid", hum_setpoint: 60 },
  { setpoint: 35.5, hum_setpoint: 42 },
];

const rejectedClientSide: CommandForm[] = [
  { setpoint: 45 },
  { setpoint: 19.9 },
  { hum_setpoint: 90 },
  {},
];

for (const form of valid) {
  const errors = validateCommandForm(form);
  if (Object.keys(errors).length > 0) {
    throw new Error(`fixture form ${JSON.stringify(form)} unexpectedly invalid: ${JSON.stringify(errors)}`);
  }
}
for (const form of rejectedClientSide) {
  if (Object.keys(validateCommandForm(form)).length === 0) {
    throw new Error(`fixture form ${JSON.stringify(form)} should be invalid client-side`);
  }
}

const doc = {
  comment: "requests the dashboard emits; regenerate with: npm run build",
  command_bodies: valid.map(buildCommandBody),
  rejected_client_side: rejectedClientSide.map(buildCommandBody),
  ack_bodies: ["who=dashboard", "who=nurse%20a"],
  feed_queries: ["results=200", "results=1", "results=8000"],
};

const out = process.argv[2] ?? "contract/requests.json";
mkdirSync(dirname(out), { recursive: true });
writeFileSync(out, JSON.stringify(doc, null, 2) + "\n");
console.log(`wrote ${out} (${doc.command_bodies.length} valid command bodies)`);
