import { ServiceClient } from './api.js';
import type { ChatRequest, Message, Recommendation, TurnIn } from './types.js';

export interface SessionState {
  messages: Message[];
  recommendations: Recommendation[];
  topK: number;
  showRaw: boolean;
  inFlight: boolean;
  error: string | null;
}

type Listener = (state: SessionState) => void;

// Chat session state machine. The human is the seeker, the model the
// recommender. At most one request is in flight; the history sent to the
// service is exactly the transcript (canonical filled text for model turns).
export class ChatSession {
  private messages: Message[] = [];
  private recommendations: Recommendation[] = [];
  private topK = 5;
  private showRaw = false;
  private inFlight = false;
  private error: string | null = null;
  private pendingText: string | null = null;
  private listeners: Listener[] = [];

  constructor(private client: ServiceClient, private now: () => number = Date.now) {}

  subscribe(listener: Listener): () => void {
    this.listeners.push(listener);
    return () => {
      this.listeners = this.listeners.filter((l) => l !== listener);
    };
  }

  private notify(): void {
    const snapshot = this.state();
    for (const listener of this.listeners) {
      listener(snapshot);
    }
  }

  state(): SessionState {
    return {
      messages: [...this.messages],
      recommendations: [...this.recommendations],
      topK: this.topK,
      showRaw: this.showRaw,
      inFlight: this.inFlight,
      error: this.error,
    };
  }

  historyPayload(extraUserText?: string): TurnIn[] {
    const history: TurnIn[] = this.messages.map((m) => ({ speaker: m.speaker, text: m.text }));
    if (extraUserText !== undefined) {
      history.push({ speaker: 'seeker', text: extraUserText });
    }
    return history;
  }

  canSend(text: string): boolean {
    return !this.inFlight && text.trim().length > 0;
  }

  async sendTurn(text: string): Promise<boolean> {
    const trimmed = text.trim();
    if (!this.canSend(trimmed)) {
      return false;
    }
    // user turn first, so the posted history is exactly the visible transcript
    this.messages.push({ speaker: 'seeker', text: trimmed, timestamp: this.now() });
    const request: ChatRequest = {
      history: this.historyPayload(),
      top_k: this.topK,
      decode: 'greedy',
    };
    this.inFlight = true;
    this.error = null;
    this.pendingText = trimmed;
    this.notify();
    try {
      const response = await this.client.postChat(request);
      this.messages.push({
        speaker: 'recommender',
        text: response.filled_response,
        raw: response.raw_response,
        timestamp: this.now(),
      });
      this.recommendations = response.recommendations;
      this.pendingText = null;
      return true;
    } catch (err) {
      // roll the user turn back: a failed send leaves the transcript
      // unchanged and retry re-sends the identical request
      this.messages.pop();
      this.error = err instanceof Error ? err.message : String(err);
      return false;
    } finally {
      this.inFlight = false;
      this.notify();
    }
  }

  // Re-send the failed request with the identical text and settings.
  async retry(): Promise<boolean> {
    if (this.pendingText === null || this.inFlight) {
      return false;
    }
    return this.sendTurn(this.pendingText);
  }

  setTopK(value: number): void {
    this.topK = Math.min(50, Math.max(1, Math.round(value)));
    this.notify();
  }

  toggleRaw(): void {
    this.showRaw = !this.showRaw;
    this.notify();
  }

  reset(): void {
    this.messages = [];
    this.recommendations = [];
    this.error = null;
    this.pendingText = null;
    this.notify();
  }

  displayText(message: Message): string {
    return this.showRaw && message.raw !== undefined ? message.raw : message.text;
  }
}
