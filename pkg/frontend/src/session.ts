// One round of auditing: hold the queue, collect a decision per card, and
// submit all of them in a single atomic call. Partial submission is a
// programming error here, mirroring the service contract.

import { ApiClient, LabelDecision, QueuePayload } from './api.js';

export type Decision = 0 | 1;

export class AuditSession {
  queue: QueuePayload | null = null;
  cursor = 0;
  private decisions = new Map<number, Decision>();

  constructor(private api: ApiClient, readonly runId: string) {}

  async loadQueue(): Promise<QueuePayload> {
    this.queue = await this.api.getQueue(this.runId);
    this.decisions.clear();
    this.cursor = 0;
    return this.queue;
  }

  get size(): number {
    return this.queue ? this.queue.items.length : 0;
  }

  get decidedCount(): number {
    return this.decisions.size;
  }

  get complete(): boolean {
    return this.queue !== null && this.decisions.size === this.queue.items.length;
  }

  decisionFor(index: number): Decision | undefined {
    return this.decisions.get(index);
  }

  decide(index: number, decision: Decision): void {
    if (!this.queue) throw new Error('no queue loaded');
    if (!this.queue.items.some((item) => item.index === index)) {
      throw new Error(`instance ${index} is not in the current queue`);
    }
    this.decisions.set(index, decision);
  }

  /** Label the card under the cursor and move to the next undecided one. */
  decideCurrent(decision: Decision): void {
    if (!this.queue) throw new Error('no queue loaded');
    const item = this.queue.items[this.cursor];
    this.decide(item.index, decision);
    this.advanceCursor();
  }

  move(step: number): void {
    if (!this.queue) return;
    const n = this.queue.items.length;
    this.cursor = Math.min(Math.max(this.cursor + step, 0), n - 1);
  }

  private advanceCursor(): void {
    if (!this.queue) return;
    const items = this.queue.items;
    for (let offset = 1; offset <= items.length; offset++) {
      const probe = (this.cursor + offset) % items.length;
      if (!this.decisions.has(items[probe].index)) {
        this.cursor = probe;
        return;
      }
    }
    // everything decided; stay put
  }

  labels(): LabelDecision[] {
    if (!this.queue) throw new Error('no queue loaded');
    return this.queue.items.map((item) => {
      const decision = this.decisions.get(item.index);
      if (decision === undefined) {
        throw new Error(`instance ${item.index} has no decision yet`);
      }
      return { index: item.index, label: decision };
    });
  }

  /** Submit every decision atomically; refuses while any card is undecided. */
  async submit(): Promise<{ accepted: number; round: number }> {
    if (!this.queue) throw new Error('no queue loaded');
    if (!this.complete) {
      throw new Error(
        `cannot submit: ${this.size - this.decidedCount} of ${this.size} cards undecided`,
      );
    }
    const key = `${this.runId}-round-${this.queue.round}`;
    const ack = await this.api.submitLabels(this.runId, this.labels(), key);
    this.queue = null;
    this.decisions.clear();
    this.cursor = 0;
    return ack;
  }
}
