// DOM wiring for the audit console. All state that matters lives on the
// service; a page reload rebuilds the view from the API alone.
//
// Keyboard: a = anomaly, n = normal, arrows move between cards,
// Enter submits once every card is decided.

import { ApiClient, Metrics, QueueItem } from './api.js';
import { AuditSession } from './session.js';
import { curvePoints, describeItem, formatScore } from './render.js';

const params = new URLSearchParams(window.location.search);
const apiBase = params.get('api') ?? 'http://127.0.0.1:8765';
const runId = params.get('run') ?? '';

const api = new ApiClient(apiBase);
const session = new AuditSession(api, runId);

const statusLine = document.getElementById('status') as HTMLElement;
const cardsBox = document.getElementById('cards') as HTMLElement;
const gaugeFill = document.getElementById('gauge-fill') as HTMLElement;
const gaugeText = document.getElementById('gauge-text') as HTMLElement;
const foundText = document.getElementById('found-text') as HTMLElement;
const curveLine = document.getElementById('curve-line') as unknown as SVGPolylineElement;
const submitButton = document.getElementById('submit') as HTMLButtonElement;

let polling: number | null = null;

function setStatus(text: string) {
  statusLine.textContent = text;
}

function renderCard(item: QueueItem): HTMLElement {
  const card = document.createElement('div');
  card.className = 'card';
  card.dataset.index = String(item.index);

  const view = describeItem(item);
  if (view.kind === 'heatmap') {
    const canvas = document.createElement('canvas');
    canvas.width = view.width;
    canvas.height = view.height;
    canvas.className = 'heatmap';
    const ctx = canvas.getContext('2d')!;
    const image = ctx.createImageData(view.width, view.height);
    for (let i = 0; i < view.pixels.length; i++) {
      const v = view.pixels[i];
      image.data[4 * i] = v;
      image.data[4 * i + 1] = v;
      image.data[4 * i + 2] = v;
      image.data[4 * i + 3] = 255;
    }
    ctx.putImageData(image, 0, 0);
    card.appendChild(canvas);
  } else if (view.kind === 'bars') {
    const list = document.createElement('div');
    list.className = 'bars';
    const maxAbs = Math.max(...view.bars.map((b) => Math.abs(b.value)), 1e-12);
    for (const bar of view.bars) {
      const row = document.createElement('div');
      row.className = 'bar-row';
      const label = document.createElement('span');
      label.textContent = `${bar.name} ${bar.value.toFixed(2)}`;
      const fill = document.createElement('div');
      fill.className = 'bar-fill' + (bar.value < 0 ? ' negative' : '');
      fill.style.width = `${(Math.abs(bar.value) / maxAbs) * 100}%`;
      row.append(label, fill);
      list.appendChild(row);
    }
    card.appendChild(list);
  } else {
    const err = document.createElement('div');
    err.className = 'card-error';
    err.textContent = view.message;
    card.appendChild(err);
  }

  const meta = document.createElement('div');
  meta.className = 'card-meta';
  meta.textContent =
    `#${item.rank} idx ${item.index} | base ${formatScore(item.base_score)}` +
    ` | head ${formatScore(item.head_score)}`;
  card.appendChild(meta);

  const buttons = document.createElement('div');
  buttons.className = 'card-buttons';
  for (const [text, decision] of [['normal', 0], ['anomaly', 1]] as const) {
    const button = document.createElement('button');
    button.textContent = text;
    button.addEventListener('click', () => {
      session.decide(item.index, decision);
      session.cursor = currentQueueIndexOf(item.index);
      refreshDecorations();
    });
    buttons.appendChild(button);
  }
  card.appendChild(buttons);
  return card;
}

function currentQueueIndexOf(index: number): number {
  return session.queue ? session.queue.items.findIndex((i) => i.index === index) : 0;
}

function refreshDecorations() {
  const cards = cardsBox.querySelectorAll<HTMLElement>('.card');
  cards.forEach((card, position) => {
    const index = Number(card.dataset.index);
    const decision = session.decisionFor(index);
    card.classList.toggle('is-anomaly', decision === 1);
    card.classList.toggle('is-normal', decision === 0);
    card.classList.toggle('is-current', position === session.cursor);
  });
  submitButton.disabled = !session.complete;
  submitButton.textContent = session.complete
    ? 'submit round'
    : `decide ${session.size - session.decidedCount} more`;
}

async function refreshDashboard() {
  let metrics: Metrics;
  try {
    metrics = await api.getMetrics(runId);
  } catch {
    return;
  }
  const fraction = metrics.budget_total
    ? metrics.budget_spent / metrics.budget_total
    : 0;
  gaugeFill.style.width = `${(fraction * 100).toFixed(1)}%`;
  gaugeText.textContent = `${metrics.budget_spent} / ${metrics.budget_total} labels`;
  foundText.textContent = `${metrics.anomalies_found} anomalies found`;
  curveLine.setAttribute(
    'points',
    curvePoints(metrics.curve, 360, 120, metrics.budget_total),
  );
}

async function showQueue() {
  const queue = await session.loadQueue();
  cardsBox.replaceChildren(...queue.items.map(renderCard));
  setStatus(`round ${queue.round}: ${queue.items.length} instances, ranked by ${queue.ranked_by}`);
  refreshDecorations();
}

async function submitRound() {
  if (!session.complete) return;
  submitButton.disabled = true;
  try {
    await session.submit();
  } catch (error) {
    setStatus(`submission rejected: ${error}; reloading queue`);
    await showQueue();
    return;
  }
  cardsBox.replaceChildren();
  setStatus('training...');
  await followRun();
}

async function followRun() {
  const run = await api.waitForStatus(runId, ['AWAITING_LABELS', 'DONE', 'ABORTED'], 600_000, 400);
  await refreshDashboard();
  if (run.status === 'AWAITING_LABELS') {
    await showQueue();
  } else if (run.status === 'DONE') {
    setStatus('run complete');
  } else {
    setStatus(`run aborted: ${run.error ?? 'unknown error'}`);
  }
}

document.addEventListener('keydown', (event) => {
  if (!session.queue) return;
  if (event.key === 'a') {
    session.decideCurrent(1);
    refreshDecorations();
  } else if (event.key === 'n') {
    session.decideCurrent(0);
    refreshDecorations();
  } else if (event.key === 'ArrowRight' || event.key === 'ArrowDown') {
    session.move(1);
    refreshDecorations();
  } else if (event.key === 'ArrowLeft' || event.key === 'ArrowUp') {
    session.move(-1);
    refreshDecorations();
  } else if (event.key === 'Enter' && session.complete) {
    void submitRound();
  }
});

submitButton.addEventListener('click', () => void submitRound());

if (!runId) {
  setStatus('missing ?run=<run_id> (and optionally &api=<service url>)');
} else {
  setStatus('connecting...');
  void refreshDashboard();
  void followRun();
  polling = window.setInterval(refreshDashboard, 2000);
  window.addEventListener('beforeunload', () => {
    if (polling !== null) clearInterval(polling);
  });
}
