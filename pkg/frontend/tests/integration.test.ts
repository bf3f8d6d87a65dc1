// End-to-end: the console's client layers drive a real human-mode run on a
// real service process for three full audit rounds. Needs the Python
// package installed (the `activeanom` CLI on PATH).

import { spawn, spawnSync, ChildProcess } from 'node:child_process';
import { mkdtempSync, rmSync } from 'node:fs';
import { tmpdir } from 'node:os';
import { join } from 'node:path';
import { afterAll, beforeAll, describe, expect, it } from 'vitest';

import { ApiClient } from '../src/api.js';
import { AuditSession } from '../src/session.js';
import { describeItem } from '../src/render.js';

const PORT = 8841;
const BASE = `http://127.0.0.1:${PORT}`;
const K = 4;
const ROUNDS = 3;

let workdir: string;
let server: ChildProcess | null = null;

async function serviceReady(timeoutMs = 30_000): Promise<void> {
  const deadline = Date.now() + timeoutMs;
  while (Date.now() < deadline) {
    try {
      const response = await fetch(`${BASE}/datasets`);
      if (response.ok) return;
    } catch {
      // not up yet
    }
    await new Promise((resolve) => setTimeout(resolve, 200));
  }
  throw new Error('service never came up');
}

beforeAll(async () => {
  workdir = mkdtempSync(join(tmpdir(), 'audit-console-'));

  // a ~1k-point fixture with hidden ground truth, via the package itself
  const fixture = join(workdir, 'fixture.npz');
  const python = spawnSync(
    'python3',
    [
      '-c',
      'import sys; from activeanom.data import save_dataset, two_regime_mixture;' +
        'save_dataset(two_regime_mixture(seed=13, n_normal=950, n_clustered=40, n_sparse=6), sys.argv[1])',
      fixture,
    ],
    { encoding: 'utf8' },
  );
  if (python.status !== 0) {
    throw new Error(`fixture generation failed: ${python.stderr}`);
  }

  server = spawn(
    'activeanom',
    ['serve', '--data-dir', join(workdir, 'state'), '--port', String(PORT)],
    { stdio: 'ignore' },
  );
  await serviceReady();

  const api = new ApiClient(BASE);
  await api.registerDataset('fixture', fixture);
}, 60_000);

afterAll(() => {
  if (server) server.kill();
  rmSync(workdir, { recursive: true, force: true });
});

describe('audit console against a live service', () => {
  it(
    'completes three audit rounds end to end',
    async () => {
      const api = new ApiClient(BASE);
      const { run_id } = await api.createRun({
        dataset: 'fixture',
        expert: 'human',
        config: {
          model_kind: 'dae_uai',
          budget: K * ROUNDS,
          k: K,
          steps_pre: 40,
          steps_active: 10,
          batch_size: 32,
          hidden_sizes: [6, 3],
          seed: 2,
        },
      });

      const session = new AuditSession(api, run_id);
      const clicked: { index: number; label: 0 | 1 }[] = [];
      const seenIndices = new Set<number>();

      for (let round = 1; round <= ROUNDS; round++) {
        await api.waitForStatus(run_id, ['AWAITING_LABELS'], 60_000);

        const before = await api.getMetrics(run_id);
        expect(before.budget_spent).toBe(K * (round - 1));

        const queue = await session.loadQueue();
        expect(queue.round).toBe(round);
        expect(queue.items).toHaveLength(K);

        for (const item of queue.items) {
          // every card renders (heatmap or bars, never an error card)
          const view = describeItem(item);
          expect(view.kind === 'heatmap' || view.kind === 'bars').toBe(true);
          expect(seenIndices.has(item.index)).toBe(false);
          seenIndices.add(item.index);

          // deterministic "clicks": alternate by rank parity
          const decision = (item.rank % 2) as 0 | 1;
          session.decide(item.index, decision);
          clicked.push({ index: item.index, label: decision });
        }

        const ack = await session.submit();
        expect(ack.accepted).toBe(K);

        // the budget gauge advances by exactly k once the round is absorbed
        await api.waitForStatus(run_id, ['AWAITING_LABELS', 'DONE'], 60_000);
        const after = await api.getMetrics(run_id);
        expect(after.budget_spent).toBe(K * round);
      }

      const run = await api.waitForStatus(run_id, ['DONE'], 60_000);
      expect(run.status).toBe('DONE');

      // The service-side label store matches the clicked decisions exactly:
      // the curve is the cumulative sum of stored labels in audit order, and
      // submissions were accepted only because they covered each queue
      // exactly, so positionwise equality of the cumulative sums pins every
      // stored (index, label) pair to what was clicked.
      const metrics = await api.getMetrics(run_id);
      let running = 0;
      const expectedCurve = clicked.map((c, position) => {
        running += c.label;
        return [position + 1, running];
      });
      expect(metrics.curve).toEqual(expectedCurve);
      expect(metrics.anomalies_found).toBe(running);
      expect(metrics.budget_spent).toBe(K * ROUNDS);
    },
    120_000,
  );
});
