import type { ChatRequest, ChatResponse, HealthStatus } from './types.js';

export type FetchLike = (input: string, init?: RequestInit) => Promise<Response>;

export class ServiceClient {
  constructor(
    public baseUrl: string,
    private fetchImpl: FetchLike = (input, init) => fetch(input, init),
  ) {}

  async postChat(request: ChatRequest): Promise<ChatResponse> {
    const response = await this.fetchImpl(`${this.baseUrl}/api/chat`, {
      method: 'POST',
      headers: { 'Content-Type': 'application/json' },
      body: JSON.stringify(request),
    });
    if (!response.ok) {
      throw new Error(`chat request failed: ${response.status} ${response.statusText}`);
    }
    return response.json();
  }

  async getHealth(): Promise<HealthStatus> {
    const response = await this.fetchImpl(`${this.baseUrl}/api/health`);
    if (!response.ok) {
      throw new Error(`health check failed: ${response.status}`);
    }
    return response.json();
  }
}
