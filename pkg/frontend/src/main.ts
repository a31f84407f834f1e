// Browser entry point: hash routing, periodic polling (one in-flight
// request per view), and click delegation for lifecycle actions and the
// tree browser.

import { ApiClient } from "./api.js";
import { ConsoleController } from "./controller.js";

const api = new ApiClient("");
const controller = new ConsoleController(api);
const POLL_MS = 1000;

const root = document.getElementById("app") as HTMLElement;
let polling = false;
let pollTimer: number | undefined;

function route(): { view: string; arg: string } {
  const hash = window.location.hash;
  const device = hash.match(/^#\/device\/(.+)$/);
  if (device) return { view: "device", arg: decodeURIComponent(device[1]) };
  const session = hash.match(/^#\/session\/(.+)$/);
  if (session) return { view: "session", arg: decodeURIComponent(session[1]) };
  return { view: "devices", arg: "" };
}

async function refresh(): Promise<void> {
  if (polling) return; // at most one in-flight poll per view
  polling = true;
  try {
    const { view, arg } = route();
    if (view === "devices") {
      root.innerHTML = `<h1>Devices</h1>` + (await controller.devicesPage());
    } else if (view === "device") {
      const [devinfo, inventory] = await Promise.all([
        controller.devinfoPanel(arg),
        controller.inventoryPanel(arg),
      ]);
      const tree = document.getElementById("tree-panel")?.innerHTML ?? "";
      root.innerHTML = `<h1><a href="#/">Devices</a> / ${arg}</h1>
        <section><h2>DevInfo</h2>${devinfo}</section>
        <section><h2>Inventory</h2><div id="inventory-panel">${inventory}</div>
        <div id="job-panel"></div></section>
        <section><h2>Management tree</h2>
        <div id="tree-panel">${tree}</div>
        <button data-tree-uri=".">Browse root</button></section>`;
    } else {
      root.innerHTML = await controller.sessionPage(arg);
    }
  } finally {
    polling = false;
  }
}

function schedulePolling(): void {
  if (pollTimer !== undefined) window.clearInterval(pollTimer);
  pollTimer = window.setInterval(() => {
    const { view } = route();
    if (view !== "session") void refresh(); // timelines are static records
  }, POLL_MS);
}

root.addEventListener("click", (event) => {
  const target = event.target as HTMLElement;
  const treeUri = target.dataset.treeUri ?? target.dataset.uri;
  if (treeUri !== undefined) {
    event.preventDefault();
    const { view, arg } = route();
    if (view === "device") {
      void controller.treePanel(arg, treeUri === "." ? undefined : treeUri)
        .then((html) => {
          const panel = document.getElementById("tree-panel");
          if (panel) panel.innerHTML = html;
        });
    }
    return;
  }
  const action = target.dataset.action;
  const app = target.dataset.app;
  if (action && action !== "retry" && app) {
    event.preventDefault();
    const { arg } = route();
    const state = target.dataset.state ?? "";
    const panel = document.getElementById("job-panel");
    if (panel) panel.innerHTML = `<p class="pending">Running ${action}…</p>`;
    void controller.triggerAction(arg, action, app, state).then((result) => {
      const jobs = document.getElementById("job-panel");
      if (jobs) jobs.innerHTML = result.panelHtml;
      const inventory = document.getElementById("inventory-panel");
      if (inventory) inventory.innerHTML = result.inventoryHtml;
    });
    return;
  }
  if (action === "retry") {
    void refresh();
  }
});

window.addEventListener("hashchange", () => void refresh());
void refresh();
schedulePolling();
