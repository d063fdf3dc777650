// Demo page logic. Expects `wasm-pack build --target web --out-dir www/pkg`
// to have produced ./pkg next to this file.

import init, {
  taxonomy_json,
  sample_side,
  render_sample_rgba,
  render_augmented_rgba,
  DemoTrainer,
} from "./pkg/porcelain_wasm.js";

await init();

const taxonomy = JSON.parse(taxonomy_json());
const side = sample_side();

// ---- section 1: sample explorer ----------------------------------------

const selects = {
  dynasty: document.getElementById("selDynasty"),
  ware: document.getElementById("selWare"),
  glaze: document.getElementById("selGlaze"),
  type: document.getElementById("selType"),
};
for (const task of taxonomy) {
  const sel = selects[task.name];
  task.categories.forEach((name, i) => {
    const opt = document.createElement("option");
    opt.value = i;
    opt.textContent = `${i} — ${name}`;
    sel.appendChild(opt);
  });
}

let augDraw = 0;

function currentLabels() {
  return [
    Number(selects.dynasty.value),
    Number(selects.ware.value),
    Number(selects.glaze.value),
    Number(selects.type.value),
  ];
}

function paint(canvas, rgba) {
  const ctx = canvas.getContext("2d");
  const img = new ImageData(new Uint8ClampedArray(rgba), side, side);
  ctx.putImageData(img, 0, 0);
}

function redrawSample() {
  const [d, w, g, t] = currentLabels();
  const seed = BigInt(document.getElementById("sampleSeed").value || 0);
  paint(document.getElementById("cleanCanvas"), render_sample_rgba(d, w, g, t, seed, 0));
  const flip = Number(document.getElementById("flipProb").value);
  const rot = Number(document.getElementById("rotMax").value);
  document.getElementById("flipVal").textContent = flip.toFixed(2);
  document.getElementById("rotVal").textContent = rot;
  paint(
    document.getElementById("augCanvas"),
    render_augmented_rgba(d, w, g, t, seed, 0, flip, rot, BigInt(augDraw)),
  );
}

for (const sel of Object.values(selects)) sel.addEventListener("change", redrawSample);
document.getElementById("sampleSeed").addEventListener("change", redrawSample);
document.getElementById("flipProb").addEventListener("input", redrawSample);
document.getElementById("rotMax").addEventListener("input", redrawSample);
document.getElementById("btnRedraw").addEventListener("click", () => {
  augDraw += 1;
  redrawSample();
});
document.getElementById("btnRandom").addEventListener("click", () => {
  for (const task of taxonomy) {
    const sel = selects[task.name];
    sel.value = Math.floor(Math.random() * task.categories.length);
  }
  redrawSample();
});
redrawSample();

// ---- section 2: live training -------------------------------------------

let trainer = null;
let running = false;
let losses = []; // {step, epoch, loss}
let holdoutPoints = []; // {step, loss}

const status = document.getElementById("status");
const btnInit = document.getElementById("btnInit");
const btnRun = document.getElementById("btnRun");
const btnPause = document.getElementById("btnPause");
const btnEval = document.getElementById("btnEval");

function drawChart() {
  const canvas = document.getElementById("lossChart");
  const ctx = canvas.getContext("2d");
  ctx.clearRect(0, 0, canvas.width, canvas.height);
  if (losses.length === 0) return;
  const margin = 34;
  const w = canvas.width - margin - 8;
  const h = canvas.height - 24 - 8;
  const maxStep = Math.max(losses[losses.length - 1].step, 1);
  const maxLoss = Math.max(...losses.map((p) => p.loss), ...holdoutPoints.map((p) => p.loss), 1e-6);
  const x = (step) => margin + (step / maxStep) * w;
  const y = (loss) => 8 + h - (loss / maxLoss) * h;

  ctx.strokeStyle = "#999";
  ctx.strokeRect(margin, 8, w, h);
  ctx.fillStyle = "#555";
  ctx.font = "11px sans-serif";
  ctx.fillText(maxLoss.toFixed(2), 2, 16);
  ctx.fillText("0", 20, 8 + h);
  ctx.fillText("step " + maxStep, canvas.width - 60, canvas.height - 4);

  ctx.strokeStyle = "#32424e";
  ctx.lineWidth = 1.5;
  ctx.beginPath();
  losses.forEach((p, i) => (i === 0 ? ctx.moveTo(x(p.step), y(p.loss)) : ctx.lineTo(x(p.step), y(p.loss))));
  ctx.stroke();

  // epoch boundaries
  ctx.fillStyle = "#b3543e";
  let seenEpoch = 0;
  for (const p of losses) {
    if (p.epoch !== seenEpoch) {
      seenEpoch = p.epoch;
      ctx.beginPath();
      ctx.arc(x(p.step), y(p.loss), 2.5, 0, Math.PI * 2);
      ctx.fill();
    }
  }

  if (holdoutPoints.length > 1) {
    ctx.strokeStyle = "#7a6a52";
    ctx.setLineDash([5, 4]);
    ctx.beginPath();
    holdoutPoints.forEach((p, i) =>
      i === 0 ? ctx.moveTo(x(p.step), y(p.loss)) : ctx.lineTo(x(p.step), y(p.loss)),
    );
    ctx.stroke();
    ctx.setLineDash([]);
  }
}

btnInit.addEventListener("click", () => {
  running = false;
  const n = Number(document.getElementById("nSamples").value);
  const seed = BigInt(document.getElementById("trainSeed").value || 0);
  const batch = Number(document.getElementById("batchSize").value);
  status.textContent = "building model and rendering dataset…";
  setTimeout(() => {
    trainer = new DemoTrainer(n, seed, batch);
    losses = [];
    holdoutPoints = [];
    const report = JSON.parse(trainer.parameter_report());
    status.textContent =
      `ready: ${trainer.train_size()} train / ${trainer.holdout_size()} held out, ` +
      `${trainer.steps_per_epoch()} steps per epoch, ${report.total.toLocaleString()} parameters`;
    btnRun.disabled = false;
    btnPause.disabled = true;
    btnEval.disabled = false;
    drawChart();
  }, 30);
});

function stepLoop() {
  if (!running || !trainer) return;
  const out = JSON.parse(trainer.step());
  losses.push(out);
  const epochDone = losses.length > 1 && out.epoch !== losses[losses.length - 2].epoch;
  if (epochDone) {
    const ev = JSON.parse(trainer.evaluate());
    holdoutPoints.push({ step: out.step, loss: ev.holdout_loss });
  }
  status.textContent =
    `epoch ${out.epoch}, step ${out.step}: train loss ${out.loss.toFixed(4)} ` +
    `(dynasty ${out.per_task[0].toFixed(3)}, ware ${out.per_task[1].toFixed(3)}, ` +
    `glaze ${out.per_task[2].toFixed(3)}, type ${out.per_task[3].toFixed(3)})`;
  drawChart();
  setTimeout(stepLoop, 15);
}

btnRun.addEventListener("click", () => {
  running = true;
  btnRun.disabled = true;
  btnPause.disabled = false;
  stepLoop();
});
btnPause.addEventListener("click", () => {
  running = false;
  btnRun.disabled = false;
  btnPause.disabled = true;
});

// ---- section 3: evaluation heatmaps --------------------------------------

function heatColor(v) {
  // 0 -> paper, 1 -> deep celadon green
  const r = Math.round(245 - 195 * v);
  const g = Math.round(242 - 110 * v);
  const b = Math.round(236 - 150 * v);
  return `rgb(${r},${g},${b})`;
}

btnEval.addEventListener("click", () => {
  if (!trainer) return;
  const ev = JSON.parse(trainer.evaluate());
  document.getElementById("evalSummary").textContent =
    `held-out loss ${ev.holdout_loss.toFixed(4)} over ${ev.n} samples · accuracies: ` +
    ev.tasks.map((t) => `${t.task} ${(t.accuracy * 100).toFixed(1)}%`).join(" · ");
  const wrap = document.getElementById("matrices");
  wrap.innerHTML = "";
  for (const t of ev.tasks) {
    const k = t.matrix.length;
    const cell = Math.max(10, Math.min(22, Math.floor(220 / k)));
    const canvas = document.createElement("canvas");
    canvas.width = k * cell + 30;
    canvas.height = k * cell + 30;
    const ctx = canvas.getContext("2d");
    const rowMax = t.matrix.map((row) => Math.max(...row, 1));
    for (let i = 0; i < k; i++) {
      for (let j = 0; j < k; j++) {
        ctx.fillStyle = heatColor(t.matrix[i][j] / rowMax[i]);
        ctx.fillRect(30 + j * cell, 30 + i * cell, cell - 1, cell - 1);
        if (t.matrix[i][j] > 0 && cell >= 14) {
          ctx.fillStyle = "#333";
          ctx.font = "9px sans-serif";
          ctx.fillText(t.matrix[i][j], 30 + j * cell + 2, 30 + i * cell + 10);
        }
      }
    }
    ctx.fillStyle = "#555";
    ctx.font = "10px sans-serif";
    ctx.fillText("pred →", 30, 12);
    ctx.save();
    ctx.translate(10, 30 + (k * cell) / 2);
    ctx.rotate(-Math.PI / 2);
    ctx.fillText("true →", -14, 0);
    ctx.restore();

    const box = document.createElement("div");
    box.className = "matrixWrap";
    const title = document.createElement("div");
    title.textContent = `${t.task} (${(t.accuracy * 100).toFixed(1)}%)`;
    box.appendChild(title);
    box.appendChild(canvas);
    wrap.appendChild(box);
  }
});
