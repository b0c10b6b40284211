/** DOM wiring for the degradation-control panel. */

import { createClient } from "./api.js";
import { ViewTransform, diffOverlay } from "./compare.js";
import { SessionModel, settingsDiff } from "./session.js";
import type { HistoryEntry } from "./types.js";

const api = createClient("");
const session = new SessionModel(api);

const $ = <T extends HTMLElement>(id: string) => document.getElementById(id) as T;

const upload = $<HTMLInputElement>("upload");
const lrCanvas = $<HTMLCanvasElement>("lr-canvas");
const srCanvas = $<HTMLCanvasElement>("sr-canvas");
const banner = $<HTMLDivElement>("banner");
const runButton = $<HTMLButtonElement>("run");
const historyList = $<HTMLUListElement>("history");
const reportPanel = $<HTMLPreElement>("report");

const dnSlider = $<HTMLInputElement>("dn");
const dbSlider = $<HTMLInputElement>("db");
const dnOverride = $<HTMLInputElement>("dn-override");
const dbOverride = $<HTMLInputElement>("db-override");
const dnValue = $<HTMLSpanElement>("dn-value");
const dbValue = $<HTMLSpanElement>("db-value");
const cfgSlider = $<HTMLInputElement>("cfg");
const cfgValue = $<HTMLSpanElement>("cfg-value");
const noiseSlider = $<HTMLInputElement>("noise");
const noiseValue = $<HTMLSpanElement>("noise-value");
const seedInput = $<HTMLInputElement>("seed");

const compareSection = $<HTMLDivElement>("compare");
const compareA = $<HTMLCanvasElement>("compare-a");
const compareB = $<HTMLCanvasElement>("compare-b");
const compareDiff = $<HTMLCanvasElement>("compare-diff");
const compareInfo = $<HTMLDivElement>("compare-info");

let selected: number[] = [];
const view = new ViewTransform();

function setBanner(text: string | null, kind: "error" | "info" = "error"): void {
  banner.textContent = text ?? "";
  banner.className = text ? `banner ${kind}` : "banner hidden";
}

function drawB64(canvas: HTMLCanvasElement, b64: string): Promise<void> {
  return new Promise((resolve, reject) => {
    const img = new Image();
    img.onload = () => {
      canvas.width = img.width;
      canvas.height = img.height;
      canvas.getContext("2d")?.drawImage(img, 0, 0);
      resolve();
    };
    img.onerror = () => reject(new Error("could not decode image"));
    img.src = `data:image/png;base64,${b64}`;
  });
}

function syncControls(): void {
  const d = session.displayedD();
  dnSlider.value = d.dN.toFixed(3);
  dbSlider.value = d.dB.toFixed(3);
  dnValue.textContent = d.dN.toFixed(2);
  dbValue.textContent = d.dB.toFixed(2);
  dnOverride.checked = session.settings.dN !== null;
  dbOverride.checked = session.settings.dB !== null;
  dnSlider.disabled = !dnOverride.checked;
  dbSlider.disabled = !dbOverride.checked;
  cfgValue.textContent = session.settings.lambdaCfg.toFixed(2);
  noiseValue.textContent = session.settings.noiseSigmaStart.toFixed(2);
  runButton.disabled = session.imageB64 === null;
  runButton.textContent = session.busy
    ? `running… (${session.queuedRuns} queued)`
    : "Run super-resolution";
}

function renderHistory(): void {
  historyList.replaceChildren(
    ...session.history
      .slice()
      .reverse()
      .map((entry) => historyItem(entry)),
  );
}

function historyItem(entry: HistoryEntry): HTMLLIElement {
  const li = document.createElement("li");
  const thumb = document.createElement("img");
  thumb.src = `data:image/png;base64,${entry.imageB64}`;
  thumb.title = `run ${entry.id}`;
  const label = document.createElement("span");
  const s = entry.settings;
  label.textContent =
    `#${entry.id} d=(${entry.report.d_used[0].toFixed(2)}, ${entry.report.d_used[1].toFixed(2)}) ` +
    `λ=${s.lambdaCfg} seed=${s.seed} ${entry.report.unet_forwards} fwd`;

  const pin = document.createElement("button");
  pin.textContent = entry.pinned ? "unpin" : "pin";
  pin.onclick = () => {
    session.togglePin(entry.id);
    renderHistory();
  };

  const pick = document.createElement("input");
  pick.type = "checkbox";
  pick.checked = selected.includes(entry.id);
  pick.onchange = () => {
    selected = pick.checked
      ? [...selected, entry.id].slice(-2)
      : selected.filter((x) => x !== entry.id);
    renderCompare();
    renderHistory();
  };

  li.append(pick, thumb, label, pin);
  if (entry.pinned) li.classList.add("pinned");
  li.onclick = (ev) => {
    if (ev.target === pick || ev.target === pin) return;
    void drawB64(srCanvas, entry.imageB64);
    reportPanel.textContent = JSON.stringify(entry.report, null, 2);
  };
  return li;
}

function pixelsOf(canvas: HTMLCanvasElement) {
  const ctx = canvas.getContext("2d");
  if (!ctx) throw new Error("no 2d context");
  return ctx.getImageData(0, 0, canvas.width, canvas.height);
}

async function renderCompare(): Promise<void> {
  if (selected.length < 2) {
    compareSection.classList.add("hidden");
    return;
  }
  const a = session.entry(selected[0]);
  const b = session.entry(selected[1]);
  if (!a || !b) return;
  compareSection.classList.remove("hidden");
  await drawB64(compareA, a.imageB64);
  await drawB64(compareB, b.imageB64);
  const pa = pixelsOf(compareA);
  const pb = pixelsOf(compareB);
  const diff = diffOverlay(pa, pb);
  compareDiff.width = pa.width;
  compareDiff.height = pa.height;
  const ctx = compareDiff.getContext("2d");
  if (ctx) {
    ctx.putImageData(new ImageData(diff.overlay, pa.width, pa.height), 0, 0);
  }
  const changed = settingsDiff(a.settings, b.settings);
  compareInfo.textContent =
    `runs #${a.id} vs #${b.id} — changed settings: ` +
    (changed.length ? changed.join(", ") : "none") +
    ` — differing pixels: ${diff.changedPixels}`;
  applyView();
}

function applyView(): void {
  for (const canvas of [compareA, compareB, compareDiff]) {
    const ctx = canvas.getContext("2d");
    if (ctx) {
      // redraw under the shared transform
      const img = new Image();
      void img;
    }
  }
  // CSS transform keeps pan/zoom synchronized without re-decoding images
  const t = `translate(${view.tx}px, ${view.ty}px) scale(${view.scale})`;
  compareA.style.transform = t;
  compareB.style.transform = t;
  compareDiff.style.transform = t;
}

for (const canvas of [compareA, compareB, compareDiff]) {
  canvas.addEventListener("wheel", (ev) => {
    ev.preventDefault();
    view.zoomAt(ev.offsetX, ev.offsetY, ev.deltaY < 0 ? 1.2 : 1 / 1.2);
    applyView();
  });
  let dragging = false;
  let last: [number, number] = [0, 0];
  canvas.addEventListener("pointerdown", (ev) => {
    dragging = true;
    last = [ev.clientX, ev.clientY];
    canvas.setPointerCapture(ev.pointerId);
  });
  canvas.addEventListener("pointermove", (ev) => {
    if (!dragging) return;
    view.panBy(ev.clientX - last[0], ev.clientY - last[1]);
    last = [ev.clientX, ev.clientY];
    applyView();
  });
  canvas.addEventListener("pointerup", () => {
    dragging = false;
  });
}

upload.onchange = () => {
  const file = upload.files?.[0];
  if (!file) return;
  const reader = new FileReader();
  reader.onload = async () => {
    const b64 = (reader.result as string).split(",", 2)[1];
    try {
      await drawB64(lrCanvas, b64);
      await session.upload(b64, file.name);
      setBanner(`estimated d = (${session.estimated?.dN.toFixed(2)}, ${session.estimated?.dB.toFixed(2)})`, "info");
    } catch (err) {
      setBanner(session.error ?? String(err));
    }
    syncControls();
  };
  reader.readAsDataURL(file);
};

dnOverride.onchange = () => {
  session.setNoiseScore(dnOverride.checked ? parseFloat(dnSlider.value) : null);
  syncControls();
};
dbOverride.onchange = () => {
  session.setBlurScore(dbOverride.checked ? parseFloat(dbSlider.value) : null);
  syncControls();
};
dnSlider.oninput = () => {
  session.setNoiseScore(parseFloat(dnSlider.value));
  syncControls();
};
dbSlider.oninput = () => {
  session.setBlurScore(parseFloat(dbSlider.value));
  syncControls();
};
cfgSlider.oninput = () => {
  session.setLambda(parseFloat(cfgSlider.value));
  syncControls();
};
noiseSlider.oninput = () => {
  session.setNoiseStart(parseFloat(noiseSlider.value));
  syncControls();
};
seedInput.onchange = () => {
  session.setSeed(parseInt(seedInput.value || "0", 10));
  syncControls();
};

runButton.onclick = async () => {
  syncControls();
  try {
    const entry = await session.run();
    await drawB64(srCanvas, entry.imageB64);
    reportPanel.textContent = JSON.stringify(entry.report, null, 2);
    setBanner(null);
    renderHistory();
  } catch {
    setBanner(session.error ?? "inference failed");
  }
  syncControls();
};

void api
  .health()
  .then((h) => setBanner(`service ready (bundle: ${JSON.stringify(h.bundle)})`, "info"))
  .catch(() => setBanner("service down — start it with: dgsr serve --bundle <dir>"));
syncControls();
