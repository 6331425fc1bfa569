#ifndef _NET_NF_TABLES_H
#define _NET_NF_TABLES_H

#define NFT_SET_ANONYMOUS	0x1
#define NFT_SET_EVAL		0x40

struct nft_ctx;

struct nft_set {
	struct list_head	list;
	struct list_head	bindings;
	char			*name;
	u32			use;
	u16			flags;
};

struct nft_set_binding {
	struct list_head	list;
	const struct nft_chain	*chain;
	u32			flags;
};

void nft_set_destroy(const struct nft_ctx *ctx, struct nft_set *set);
int nf_tables_bind_set(const struct nft_ctx *ctx, struct nft_set *set,
		       struct nft_set_binding *binding);

#endif /* _NET_NF_TABLES_H */
