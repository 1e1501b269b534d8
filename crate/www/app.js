import init, { fit_corpus, coefficients, similarity } from "./pkg/cpm_demo.js";

const VERTEX_COLORS = ["#d95f02", "#1b9e77", "#7570b3"];

const DEFAULT_CORPUS = `# restaurant
book a table for two at an italian restaurant
i want cheap food in the centre of town
find me a restaurant that serves sushi
is there a vegetarian place near the station
reserve dinner for four people tonight
what restaurants are open late in the north
# hotel
i need a hotel with free parking and wifi
book a double room for three nights
find a cheap guesthouse in the east part of town
does the hotel have a swimming pool
i would like to stay somewhere with free breakfast
cancel my room reservation please
# travel
when does the next train to cambridge leave
i need a taxi to the airport at nine
how much is a ticket to london on saturday
book me a seat on the early morning train
what time does the last bus depart
is there a direct train on sunday afternoon`;

// The fitted state lives here between calls: the artifact JSON goes back
// into the wasm side verbatim, the view feeds the canvas.
let artifactJson = null;
let view = null;
let overlayPoint = null;

const $ = (id) => document.getElementById(id);

function parseResponse(jsonText, errorEl) {
  const value = JSON.parse(jsonText);
  if (value.error) {
    errorEl.textContent = `${value.error.kind}: ${value.error.message}`;
    return null;
  }
  errorEl.textContent = "";
  return value;
}

// --- plotting ---------------------------------------------------------------

function plotTransform(canvas) {
  const xs = view.points.xs.concat(view.vertices.xs);
  const ys = view.points.ys.concat(view.vertices.ys);
  if (overlayPoint) {
    xs.push(overlayPoint.x);
    ys.push(overlayPoint.y);
  }
  const pad = 0.1;
  const minX = Math.min(...xs), maxX = Math.max(...xs);
  const minY = Math.min(...ys), maxY = Math.max(...ys);
  const spanX = (maxX - minX) || 1, spanY = (maxY - minY) || 1;
  const inset = 24;
  const w = canvas.width - 2 * inset, h = canvas.height - 2 * inset;
  return (x, y) => [
    inset + ((x - (minX - pad * spanX)) / (spanX * (1 + 2 * pad))) * w,
    // Canvas y grows downward; flip so the plot reads like a chart.
    inset + h - ((y - (minY - pad * spanY)) / (spanY * (1 + 2 * pad))) * h,
  ];
}

function drawPlot() {
  const canvas = $("plot");
  const ctx = canvas.getContext("2d");
  ctx.clearRect(0, 0, canvas.width, canvas.height);
  const t = plotTransform(canvas);

  // Triangle edges.
  ctx.strokeStyle = "#999";
  ctx.lineWidth = 1.5;
  ctx.beginPath();
  for (let i = 0; i <= 3; i++) {
    const j = i % 3;
    const [px, py] = t(view.vertices.xs[j], view.vertices.ys[j]);
    if (i === 0) ctx.moveTo(px, py);
    else ctx.lineTo(px, py);
  }
  ctx.stroke();

  // Utterance points.
  ctx.fillStyle = "#333";
  for (let i = 0; i < view.points.xs.length; i++) {
    const [px, py] = t(view.points.xs[i], view.points.ys[i]);
    ctx.beginPath();
    ctx.arc(px, py, 3.5, 0, 2 * Math.PI);
    ctx.fill();
  }

  // Vertices, color-coded and labeled.
  ctx.font = "bold 13px system-ui, sans-serif";
  for (let j = 0; j < 3; j++) {
    const [px, py] = t(view.vertices.xs[j], view.vertices.ys[j]);
    ctx.fillStyle = VERTEX_COLORS[j];
    ctx.fillRect(px - 5, py - 5, 10, 10);
    ctx.fillText(`V${j}`, px + 8, py - 8);
  }

  // The decomposed sentence, if any.
  if (overlayPoint) {
    const [px, py] = t(overlayPoint.x, overlayPoint.y);
    ctx.strokeStyle = "#000";
    ctx.lineWidth = 2;
    ctx.beginPath();
    ctx.moveTo(px - 6, py); ctx.lineTo(px + 6, py);
    ctx.moveTo(px, py - 6); ctx.lineTo(px, py + 6);
    ctx.stroke();
  }
}

// --- section 1: fit ----------------------------------------------------------

function renderTopWords() {
  const html = view.top_words.map(({ vertex, words }) => {
    const items = words
      .map((w) => `<li>${escapeHtml(w.word)} <span class="w">${w.weight.toFixed(3)}</span></li>`)
      .join("");
    return `<h3><span class="swatch" style="background:${VERTEX_COLORS[vertex]}"></span>Vertex ${vertex}</h3><ol>${items}</ol>`;
  }).join("");
  $("top-words").innerHTML = html;
}

function escapeHtml(s) {
  return s.replace(/[&<>"']/g, (c) => `&#${c.charCodeAt(0)};`);
}

function onFit() {
  const response = fit_corpus($("corpus").value, 1);
  const value = parseResponse(response, $("fit-error"));
  if (!value) return;
  artifactJson = JSON.stringify(value.artifact);
  view = value.view;
  overlayPoint = null;
  $("fit-stats").textContent =
    `${view.line_count} utterances, ${view.vocab_size} words, triangle area ${view.volume.toPrecision(3)}`;
  $("fit-output").classList.add("ready");
  drawPlot();
  renderTopWords();
  for (const id of ["coeffs-btn", "sim-btn"]) $(id).disabled = false;
  for (const id of ["coeffs-locked", "sim-locked"]) $(id).style.display = "none";
}

// --- section 2: decompose ----------------------------------------------------

function onDecompose() {
  const response = coefficients(artifactJson, $("coeffs-text").value);
  const value = parseResponse(response, $("coeffs-error"));
  if (!value) return;
  overlayPoint = { x: value.x, y: value.y };
  drawPlot();
  $("coeffs-bars").innerHTML = value.coefficients.map((c, j) => `
    <div class="bar-row">
      <span class="bar-label">vertex ${j}</span>
      <div class="bar-track">
        <div class="bar-fill" style="width:${(100 * c).toFixed(1)}%;background:${VERTEX_COLORS[j]}"></div>
      </div>
      <span class="bar-value">${c.toFixed(3)}</span>
    </div>`).join("");
}

// --- section 3: similarity ---------------------------------------------------

function heatColor(v) {
  // v in [0, 1]: white at 0 toward a deep blue at 1, dark text past midpoint.
  const light = 97 - 55 * v;
  return [`hsl(215 70% ${light}%)`, light < 60 ? "#fff" : "#1c1c1c"];
}

function onSimilarity() {
  const response = similarity(artifactJson, $("sim-text").value);
  const value = parseResponse(response, $("sim-error"));
  if (!value) return;
  const t = value.tokens.length;
  const hat = value.hat.data;
  const raw = value.raw.data;
  let html = "<table class='heat'><tr><th></th>";
  for (const tok of value.tokens) html += `<th>${escapeHtml(tok)}</th>`;
  html += "</tr>";
  for (let i = 0; i < t; i++) {
    html += `<tr><th>${escapeHtml(value.tokens[i])}</th>`;
    for (let j = 0; j < t; j++) {
      const v = hat[i * t + j];
      const [bg, fg] = heatColor(v);
      const tip = `cosine ${raw[i * t + j].toFixed(3)}`;
      html += `<td style="background:${bg};color:${fg}" title="${tip}">${v.toFixed(2)}</td>`;
    }
    html += "</tr>";
  }
  html += "</table>";
  $("sim-heat").innerHTML = html;
}

// --- wiring -------------------------------------------------------------------

async function main() {
  await init();
  $("corpus").value = DEFAULT_CORPUS;
  $("fit-btn").addEventListener("click", onFit);
  $("coeffs-btn").addEventListener("click", onDecompose);
  $("sim-btn").addEventListener("click", onSimilarity);
  for (const [input, btn] of [["coeffs-text", "coeffs-btn"], ["sim-text", "sim-btn"]]) {
    $(input).addEventListener("keydown", (e) => {
      if (e.key === "Enter" && !$(btn).disabled) $(btn).click();
    });
  }
}

main();
