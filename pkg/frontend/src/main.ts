import { ApiClient } from "./api.js";
import { blendHeat } from "./heatmap.js";
import { decodeBase64Pgm, GrayImage } from "./pgm.js";
import { ReviewLoop } from "./review.js";
import type { History, RankedItem } from "./types.js";

const POLL_INTERVAL_MS = 1000;
const K_TAGS = 5;
const TOP_L = 20;

const params = new URLSearchParams(window.location.search);
const base = params.get("api") ?? "http://127.0.0.1:8008";
const api = new ApiClient(base);

const grid = document.getElementById("grid") as HTMLDivElement;
const banner = document.getElementById("banner") as HTMLDivElement;
const statusLine = document.getElementById("status") as HTMLDivElement;
const submitBtn = document.getElementById("submit") as HTMLButtonElement;
const resetBtn = document.getElementById("reset") as HTMLButtonElement;
const tagCount = document.getElementById("tag-count") as HTMLSpanElement;
const chart = document.getElementById("chart") as HTMLCanvasElement;

const frameCache = new Map<number, GrayImage>();
const saliencyCache = new Map<number, GrayImage>();
const overlayOn = new Set<number>();

const loop = new ReviewLoop(api, { k: K_TAGS, top: TOP_L, pollIntervalMs: POLL_INTERVAL_MS }, {
  onRanking: (items) => void renderGrid(items),
  onStatus: (status, busy) => {
    statusLine.textContent =
      `phase ${status.phase}` +
      (status.phase === "training" ? ` (iteration ${status.iteration}, epoch ${status.epoch})` : "") +
      ` | round ${status.round} | progress ${(status.progress * 100).toFixed(0)}%`;
    updateControls(busy);
  },
  onHistory: (history) => drawChart(history),
  onError: (message) => showBanner(message),
});

function showBanner(message: string): void {
  banner.textContent = `${message} (retrying)`;
  banner.style.display = "block";
  setTimeout(() => {
    banner.style.display = "none";
  }, 2500);
}

function updateControls(busy: boolean): void {
  const sel = loop.tags.selection();
  tagCount.textContent =
    `${sel.anomalies.length}/${K_TAGS} anomalies, ${sel.normals.length}/${K_TAGS} normals`;
  submitBtn.disabled = !loop.canSubmit();
  resetBtn.disabled = busy;
}

async function thumbnail(frameId: number): Promise<GrayImage | null> {
  if (frameCache.has(frameId)) return frameCache.get(frameId)!;
  const payload = await api.getFrame(frameId);
  if (payload.mode === "image" && payload.pgm_base64) {
    const img = decodeBase64Pgm(payload.pgm_base64);
    frameCache.set(frameId, img);
    return img;
  }
  if (payload.values) {
    frameCache.set(frameId, sparkline(payload.values));
    return frameCache.get(frameId)!;
  }
  return null;
}

/** Vector frames get a bar-style rendering so the expert still sees shape. */
function sparkline(values: number[], size = 48): GrayImage {
  const pixels = new Uint8Array(size * size).fill(24);
  const lo = Math.min(...values);
  const hi = Math.max(...values);
  const span = hi - lo || 1;
  for (let c = 0; c < size; c++) {
    const v = values[Math.floor((c / size) * values.length)];
    const h = Math.round(((v - lo) / span) * (size - 2));
    for (let r = size - 1 - h; r < size; r++) pixels[r * size + c] = 210;
  }
  return { width: size, height: size, pixels };
}

function paint(canvas: HTMLCanvasElement, img: GrayImage, overlay: GrayImage | null): void {
  canvas.width = img.width;
  canvas.height = img.height;
  const ctx = canvas.getContext("2d")!;
  let rgba: Uint8ClampedArray;
  if (overlay) {
    rgba = blendHeat(img, overlay);
  } else {
    rgba = new Uint8ClampedArray(img.width * img.height * 4);
    for (let p = 0; p < img.pixels.length; p++) {
      rgba[4 * p] = rgba[4 * p + 1] = rgba[4 * p + 2] = img.pixels[p];
      rgba[4 * p + 3] = 255;
    }
  }
  const data = ctx.createImageData(img.width, img.height);
  data.data.set(rgba);
  ctx.putImageData(data, 0, 0);
}

async function renderGrid(items: RankedItem[]): Promise<void> {
  grid.textContent = "";
  for (const item of items) {
    const card = document.createElement("div");
    card.className = "card";
    const title = document.createElement("div");
    title.className = "card-title";
    title.textContent = `#${item.rank} frame ${item.frame_id} score ${item.score.toFixed(3)}`;
    const canvas = document.createElement("canvas");
    canvas.className = "thumb";
    const buttons = document.createElement("div");
    buttons.className = "buttons";
    const anomalyBtn = document.createElement("button");
    anomalyBtn.textContent = "anomaly";
    const normalBtn = document.createElement("button");
    normalBtn.textContent = "normal";
    const overlayBtn = document.createElement("button");
    overlayBtn.textContent = "heat";

    const refreshTagStyles = () => {
      const tag = loop.tags.tagOf(item.frame_id);
      anomalyBtn.classList.toggle("active-anomaly", tag === "anomaly");
      normalBtn.classList.toggle("active-normal", tag === "normal");
      updateControls(loop.busy);
    };
    anomalyBtn.onclick = () => {
      if (!loop.tags.toggle(item.frame_id, "anomaly")) {
        showBanner(`anomaly tag cap is ${K_TAGS}`);
      }
      refreshTagStyles();
    };
    normalBtn.onclick = () => {
      if (!loop.tags.toggle(item.frame_id, "normal")) {
        showBanner(`normal tag cap is ${K_TAGS}`);
      }
      refreshTagStyles();
    };
    overlayBtn.onclick = async () => {
      if (overlayOn.has(item.frame_id)) {
        overlayOn.delete(item.frame_id);
      } else {
        overlayOn.add(item.frame_id);
        if (!saliencyCache.has(item.frame_id)) {
          try {
            const sal = await api.getSaliency(item.frame_id);
            saliencyCache.set(item.frame_id, decodeBase64Pgm(sal.pgm_base64));
          } catch (err) {
            overlayOn.delete(item.frame_id);
            showBanner(err instanceof Error ? err.message : String(err));
          }
        }
      }
      const img = frameCache.get(item.frame_id);
      if (img) paint(canvas, img, overlayOn.has(item.frame_id) ? saliencyCache.get(item.frame_id) ?? null : null);
    };

    buttons.append(anomalyBtn, normalBtn, overlayBtn);
    card.append(title, canvas, buttons);
    grid.append(card);
    refreshTagStyles();
    void thumbnail(item.frame_id).then((img) => {
      if (img) paint(canvas, img, overlayOn.has(item.frame_id) ? saliencyCache.get(item.frame_id) ?? null : null);
    });
  }
}

function drawChart(history: History): void {
  const ctx = chart.getContext("2d")!;
  ctx.clearRect(0, 0, chart.width, chart.height);
  const rounds = history.rounds;
  if (rounds.length === 0) return;
  ctx.strokeStyle = "#888";
  ctx.strokeRect(0.5, 0.5, chart.width - 1, chart.height - 1);
  const values = rounds.map((r) => (history.metric === "auc" ? r.auc ?? 0 : r.top_changed ?? 0));
  const hi = history.metric === "auc" ? 1 : Math.max(1, ...values);
  const lo = history.metric === "auc" ? Math.min(...values, 0.5) : 0;
  const x = (i: number) => 8 + (i / Math.max(1, rounds.length - 1)) * (chart.width - 16);
  const y = (v: number) => chart.height - 8 - ((v - lo) / (hi - lo || 1)) * (chart.height - 16);
  ctx.strokeStyle = history.metric === "auc" ? "#2a7" : "#27c";
  ctx.beginPath();
  values.forEach((v, i) => (i === 0 ? ctx.moveTo(x(i), y(v)) : ctx.lineTo(x(i), y(v))));
  ctx.stroke();
  ctx.fillStyle = "#ccc";
  ctx.font = "10px sans-serif";
  ctx.fillText(
    history.metric === "auc"
      ? `AUC ${values[values.length - 1].toFixed(4)} @ round ${rounds.length - 1}`
      : `top-${TOP_L} changes, round ${rounds.length - 1}`,
    8, 12,
  );
}

submitBtn.onclick = async () => {
  if (await loop.submit()) updateControls(true);
};

resetBtn.onclick = async () => {
  try {
    await api.postReset();
    loop.tags.clear();
    await loop.refresh();
  } catch (err) {
    showBanner(err instanceof Error ? err.message : String(err));
  }
};

void loop.refresh().then(() => updateControls(loop.busy));
loop.start();
