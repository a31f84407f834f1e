// Pure HTML builders. Every displayed value comes straight from one API
// response field; these functions do no fetching and keep no state, so
// they are testable without a DOM.

import { actionsFor, statusLabel } from "./labels.js";
import { decodeBase64 } from "./api.js";
import type {
  DeviceRecord,
  InventoryResponse,
  JobView,
  Transcript,
  TreeNodeView,
} from "./types.js";

export function escapeHtml(value: unknown): string {
  return String(value)
    .replaceAll("&", "&amp;")
    .replaceAll("<", "&lt;")
    .replaceAll(">", "&gt;")
    .replaceAll('"', "&quot;");
}

export function errorBanner(message: string): string {
  return `<div class="banner error">${escapeHtml(message)}
  <button data-action="retry">Retry</button></div>`;
}

export function deviceListView(devices: DeviceRecord[]): string {
  if (devices.length === 0) {
    return `<p class="empty">No devices registered.</p>`;
  }
  const rows = devices
    .map((d) => {
      const man = d.cached_devinfo["Man"] ?? "";
      const mod = d.cached_devinfo["Mod"] ?? "";
      return `<tr data-device="${escapeHtml(d.device_id)}">
      <td><a href="#/device/${escapeHtml(d.device_id)}">${escapeHtml(d.device_id)}</a></td>
      <td>${escapeHtml(d.address)}</td>
      <td>${escapeHtml(d.last_seen || "never")}</td>
      <td>${escapeHtml(man)} ${escapeHtml(mod)}</td>
      <td>${d.last_session
        ? `<a href="#/session/${escapeHtml(d.last_session)}">${escapeHtml(d.last_session)}</a>`
        : "-"}</td>
    </tr>`;
    })
    .join("\n");
  return `<table class="devices">
  <thead><tr><th>Device</th><th>Address</th><th>Last seen</th>
  <th>Model</th><th>Last session</th></tr></thead>
  <tbody>${rows}</tbody></table>`;
}

export function devinfoSummary(record: DeviceRecord): string {
  const entries = Object.entries(record.cached_devinfo);
  if (entries.length === 0) {
    return `<p class="empty">No DevInfo cached yet; run any job against this device.</p>`;
  }
  const items = entries
    .map(([key, value]) => `<dt>${escapeHtml(key)}</dt><dd>${escapeHtml(value)}</dd>`)
    .join("");
  return `<dl class="devinfo">${items}</dl>
  <p class="stale">DevInfo from session ${escapeHtml(record.devinfo_session || "-")}</p>`;
}

export function inventoryView(inventory: InventoryResponse): string {
  const staleness = `<p class="stale">State as of session ${
    escapeHtml(inventory.session_id || "-")}</p>`;
  if (inventory.rows.length === 0) {
    return `${staleness}<p class="empty">No managed applications.</p>`;
  }
  const rows = inventory.rows
    .map((row) => {
      const buttons = actionsFor(row.state)
        .map(
          (action) =>
            `<button data-action="${escapeHtml(action)}" data-app="${escapeHtml(row.app_id)}"` +
            ` data-state="${escapeHtml(row.state)}">${escapeHtml(action)}</button>`,
        )
        .join(" ");
      return `<tr data-app="${escapeHtml(row.app_id)}">
      <td>${escapeHtml(row.app_id)}</td>
      <td>${escapeHtml(row.name)}</td>
      <td>${escapeHtml(row.version)}</td>
      <td><span class="badge state-${escapeHtml(row.state)}">${escapeHtml(row.state)}</span></td>
      <td>${escapeHtml(row.origin)}</td>
      <td>${buttons}</td>
    </tr>`;
    })
    .join("\n");
  return `${staleness}<table class="inventory">
  <thead><tr><th>App</th><th>Name</th><th>Version</th><th>State</th>
  <th>Origin</th><th>Actions</th></tr></thead>
  <tbody>${rows}</tbody></table>`;
}

export function treeNodeView(node: TreeNodeView): string {
  const props = node.properties;
  const propRows = [
    ["ACL", node.acl ?? "(inherited)"],
    ["Format", props.format],
    ["Name", node.name],
    ["Size", String(props.size)],
    ["Title", props.title],
    ["Timestamp", props.tstamp],
    ["Type", props.type],
    ["VerNo", String(props.verno)],
  ]
    .map(([key, value]) => `<tr><th>${escapeHtml(key)}</th><td>${escapeHtml(value)}</td></tr>`)
    .join("");
  const value =
    node.kind === "leaf"
      ? `<pre class="value">${escapeHtml(node.value ?? `base64: ${node.value_b64 ?? ""}`)}</pre>`
      : "";
  const children =
    node.children && node.children.length
      ? `<ul class="children">${node.children
          .map(
            (name) =>
              `<li><a data-uri="${escapeHtml(childUri(node.uri, name))}" href="#">${escapeHtml(name)}</a></li>`,
          )
          .join("")}</ul>`
      : node.kind === "interior"
        ? `<p class="empty">No children.</p>`
        : "";
  return `<div class="tree-node" data-uri="${escapeHtml(node.uri)}">
  <h3>${escapeHtml(node.uri)} <span class="badge">${escapeHtml(node.permanence)}</span></h3>
  <table class="props">${propRows}</table>
  ${value}${children}</div>`;
}

export function childUri(parent: string, name: string): string {
  return parent === "." ? `./${name}` : `${parent}/${name}`;
}

export function jobPanel(job: JobView): string {
  const rows = Object.entries(job.target_status)
    .map(([target, st]) => {
      let detail: string;
      if (st.state === "done" && st.code !== undefined) {
        detail = `${st.code} ${st.label ?? statusLabel(st.code)}`;
      } else if (st.state === "failed") {
        detail = `failed: ${st.reason ?? "unknown"}`;
      } else {
        detail = st.state;
      }
      const session = st.session_id
        ? ` <a href="#/session/${escapeHtml(st.session_id)}">transcript</a>`
        : "";
      return `<li data-target="${escapeHtml(target)}">${escapeHtml(target)}: ${escapeHtml(detail)}${session}</li>`;
    })
    .join("");
  return `<div class="job-panel" data-job="${escapeHtml(job.job_id)}" data-state="${job.state}">
  <h4>${escapeHtml(job.action)} — ${escapeHtml(job.state)}</h4>
  <ul>${rows}</ul></div>`;
}

export function sessionTimeline(sessionId: string, transcript: Transcript): string {
  const rows = transcript.packages
    .map((pkg, index) => {
      const payload = escapeHtml(prettyPayload(pkg.raw));
      return `<details class="pkg ${pkg.direction}" data-index="${index}">
      <summary>#${index + 1} ${escapeHtml(pkg.direction)} msg=${pkg.msg_id}
      [${escapeHtml(pkg.phase)}] ${pkg.commands.map(escapeHtml).join(" ")}</summary>
      <pre>${payload}</pre></details>`;
    })
    .join("\n");
  const outcome = transcript.outcome;
  const ending = outcome
    ? outcome.outcome === "ok"
      ? `<p class="outcome ok">Session completed.</p>`
      : `<p class="outcome aborted">Aborted: ${escapeHtml(outcome.reason)}</p>`
    : "";
  return `<div class="timeline" data-session="${escapeHtml(sessionId)}">
  <h3>Session ${escapeHtml(sessionId)}</h3>${rows}${ending}</div>`;
}

export function prettyPayload(rawB64: string): string {
  const text = decodeBase64(rawB64);
  // One element per line keeps the package readable without a real
  // XML pretty-printer.
  return text.replaceAll("><", ">\n<");
}
